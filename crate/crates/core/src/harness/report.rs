//! Cross-run summary table: rows are (env, demo count), columns are
//! methods, cells are final mean returns. The best video method per row is
//! marked with an asterisk in the text rendering.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::HarnessMethod;
use super::run::{fmt, read_summary_csv, Summary};
use super::HarnessError;

const METHOD_ORDER: [HarnessMethod; 7] = [
    HarnessMethod::ExpertTrpo,
    HarnessMethod::Bc,
    HarnessMethod::Gail,
    HarnessMethod::Sigan,
    HarnessMethod::Vigan,
    HarnessMethod::Pixel,
    HarnessMethod::Tcn,
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    /// (env, n_demo_trajs) -> method -> mean return
    pub cells: BTreeMap<(String, usize), BTreeMap<&'static str, f64>>,
}

impl ReportTable {
    pub fn from_summaries(summaries: &[Summary]) -> Self {
        let mut cells: BTreeMap<(String, usize), BTreeMap<&'static str, f64>> = BTreeMap::new();
        for s in summaries {
            cells
                .entry((s.env.clone(), s.n_demo_trajs))
                .or_default()
                .insert(s.method.as_str(), s.mean_return);
        }
        ReportTable { cells }
    }

    /// Reads every run directory's summary.csv.
    pub fn from_run_dirs(dirs: &[std::path::PathBuf]) -> Result<Self, HarnessError> {
        if dirs.is_empty() {
            return Err(HarnessError::Io("no run directories given".into()));
        }
        let mut summaries = Vec::new();
        for d in dirs {
            let path = d.join("summary.csv");
            if !path.exists() {
                return Err(HarnessError::MissingSummary(d.clone()));
            }
            summaries.push(read_summary_csv(&path)?);
        }
        Ok(ReportTable::from_summaries(&summaries))
    }

    fn methods_present(&self) -> Vec<&'static str> {
        METHOD_ORDER
            .iter()
            .map(|m| m.as_str())
            .filter(|m| self.cells.values().any(|row| row.contains_key(m)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let methods = self.methods_present();
        let mut out = String::from("env,n_demo_trajs");
        for m in &methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for ((env, n), row) in &self.cells {
            out.push_str(env);
            out.push(',');
            out.push_str(&n.to_string());
            for m in &methods {
                out.push(',');
                if let Some(v) = row.get(m) {
                    out.push_str(&fmt(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| HarnessError::Io("empty report csv".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "env" || cols[1] != "n_demo_trajs" {
            return Err(HarnessError::Io("unrecognized report csv header".into()));
        }
        let methods: Vec<&'static str> = cols[2..]
            .iter()
            .map(|c| {
                HarnessMethod::parse(c)
                    .map(|m| m.as_str())
                    .ok_or_else(|| HarnessError::Io(format!("unknown method column {c}")))
            })
            .collect::<Result<_, _>>()?;
        let mut table = ReportTable::default();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let env = fields[0].to_string();
            let n: usize = fields[1]
                .parse()
                .map_err(|e| HarnessError::Io(format!("bad demo count: {e}")))?;
            let row = table.cells.entry((env, n)).or_default();
            for (m, f) in methods.iter().zip(&fields[2..]) {
                if !f.is_empty() {
                    let v: f64 = f
                        .parse()
                        .map_err(|e| HarnessError::Io(format!("bad cell: {e}")))?;
                    row.insert(m, v);
                }
            }
        }
        Ok(table)
    }

    /// Plain-text table; the best video method (vigan/pixel/tcn) in each
    /// row carries an asterisk.
    pub fn to_text(&self) -> String {
        let methods = self.methods_present();
        let video: Vec<&str> = ["vigan", "pixel", "tcn"]
            .into_iter()
            .filter(|m| methods.contains(m))
            .collect();
        let mut widths: Vec<usize> = methods.iter().map(|m| m.len().max(12)).collect();
        let env_w = self
            .cells
            .keys()
            .map(|(e, _)| e.len())
            .chain(["env".len()])
            .max()
            .unwrap()
            .max(8);
        let mut out = format!("{:env_w$}  {:>6}", "env", "#traj");
        for (m, w) in methods.iter().zip(&widths) {
            out.push_str(&format!("  {m:>w$}"));
        }
        out.push('\n');
        for ((env, n), row) in &self.cells {
            let best_video = video
                .iter()
                .filter_map(|m| row.get(m).map(|v| (*m, *v)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(m, _)| m);
            out.push_str(&format!("{env:env_w$}  {n:>6}"));
            for (m, w) in methods.iter().zip(widths.iter_mut()) {
                let cell = match row.get(m) {
                    Some(v) if Some(*m) == best_video => format!("{}*", fmt(*v)),
                    Some(v) => fmt(*v),
                    None => String::from("-"),
                };
                out.push_str(&format!("  {cell:>w$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes report.txt and report.csv into `out_dir`.
pub fn write_report(table: &ReportTable, out_dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    std::fs::write(out_dir.join("report.csv"), table.to_csv())
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    std::fs::write(out_dir.join("report.txt"), table.to_text())
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(env: &str, method: HarnessMethod, n: usize, ret: f64) -> Summary {
        Summary {
            env: env.into(),
            method,
            n_demo_trajs: n,
            eval_episodes: 20,
            mean_return: ret,
            std_return: 1.0,
        }
    }

    #[test]
    fn single_run_gives_one_by_one_table() {
        let t = ReportTable::from_summaries(&[summary("cartpole_analog", HarnessMethod::Gail, 5, 198.0)]);
        assert_eq!(t.cells.len(), 1);
        let csv = t.to_csv();
        assert!(csv.starts_with("env,n_demo_trajs,gail"));
        assert!(csv.contains("cartpole_analog,5,198.000000"));
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let t = ReportTable::from_summaries(&[
            summary("cartpole_analog", HarnessMethod::Gail, 5, 198.0),
            summary("cartpole_analog", HarnessMethod::Vigan, 5, 191.5),
            summary("pendulum_analog", HarnessMethod::Pixel, 1, -900.25),
            summary("pendulum_analog", HarnessMethod::Vigan, 1, -250.75),
        ]);
        let csv = t.to_csv();
        let back = ReportTable::from_csv(&csv).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), csv);
        assert_eq!(back.to_text(), t.to_text());
    }

    #[test]
    fn best_video_method_is_emphasized() {
        let t = ReportTable::from_summaries(&[
            summary("pendulum_analog", HarnessMethod::Pixel, 1, -900.0),
            summary("pendulum_analog", HarnessMethod::Vigan, 1, -250.0),
            summary("pendulum_analog", HarnessMethod::Gail, 1, -200.0),
        ]);
        let text = t.to_text();
        assert!(text.contains("-250.000000*"), "{text}");
        assert!(!text.contains("-200.000000*"), "gail is not a video method: {text}");
    }
}
