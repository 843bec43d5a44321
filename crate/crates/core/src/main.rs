use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vigan::envs::{CropRect, RenderMap, RenderMode};
use vigan::harness::{self, ExperimentConfig, HarnessMethod};
use vigan::rollout::Modality;

#[derive(Parser)]
#[command(name = "vigan", about = "Adversarial imitation learning from states, transitions, and rendered video", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RenderFlags {
    /// Frame width and height
    #[arg(long, default_value_t = 64)]
    frame_size: usize,
    /// Pixel channels (1 = grayscale, 3 = color)
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Render mode: injective | occluding | axis_degenerate
    #[arg(long, default_value = "injective")]
    render_mode: String,
    /// Per-side crop-shake bound for recorded demos (0 to 0.05 typical)
    #[arg(long, default_value_t = 0.0)]
    crop_shake: f64,
    /// 32x32 grayscale frames (overrides --frame-size/--channels)
    #[arg(long)]
    fast: bool,
}

impl RenderFlags {
    fn build(&self) -> Result<RenderMap, String> {
        let mut map = if self.fast {
            RenderMap::fast()
        } else {
            RenderMap::sized(self.frame_size, self.frame_size, self.channels)
        };
        map.mode = match self.render_mode.as_str() {
            "injective" => RenderMode::Injective,
            "occluding" => RenderMode::Occluding,
            "axis_degenerate" => RenderMode::AxisDegenerate,
            other => return Err(format!("unknown render mode `{other}`")),
        };
        map.crop_shake_max = self.crop_shake;
        Ok(map)
    }
}

#[derive(Args, Clone)]
struct CommonRunFlags {
    /// JSON experiment config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_steps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Stop once the periodic evaluation reaches this return
    #[arg(long)]
    target_return: Option<f64>,
    /// Output directory for config.json, run.csv, summary.csv, policy.vgnp
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonRunFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(env) = &self.env {
            cfg.env = env.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(it) = self.iterations {
            cfg.iterations = it;
        }
        if let Some(bs) = self.batch_steps {
            cfg.batch_steps = bs;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(t) = self.target_return {
            cfg.target_return = Some(t);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
    }

    fn load_base(&self, default_env: &str, method: HarnessMethod) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
            None => ExperimentConfig::new(default_env, method),
        };
        cfg.method = method;
        self.apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an expert with TRPO on the true reward
    TrainExpert {
        #[command(flatten)]
        run: CommonRunFlags,
    },
    /// Record expert demonstrations from a checkpoint
    RecordDemos {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 5)]
        n_trajs: usize,
        /// state_action | state_only | frames
        #[arg(long, default_value = "state_action")]
        modality: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        render: RenderFlags,
    },
    /// Run an imitation method against recorded demonstrations
    Imitate {
        /// bc | gail | sigan | vigan | pixel | tcn
        #[arg(long)]
        method: String,
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        k_frames: Option<usize>,
        #[arg(long)]
        disc_steps: Option<usize>,
        #[command(flatten)]
        run: CommonRunFlags,
        #[command(flatten)]
        render: RenderFlags,
    },
    /// Pack a directory of P6 PPM frames into a frames demo set
    IngestFrames {
        #[arg(long)]
        dir: PathBuf,
        /// Crop rectangle x,y,w,h in source pixels (default: full frame)
        #[arg(long, value_delimiter = ',', num_args = 4)]
        crop: Option<Vec<usize>>,
        #[arg(long, default_value_t = 64)]
        out_w: usize,
        #[arg(long, default_value_t = 64)]
        out_h: usize,
        /// Environment label stored in the demo set
        #[arg(long, default_value = "external")]
        env_label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check render-map injectivity and the discriminator equivalence
    VerifyInjectivity {
        #[arg(long)]
        env: String,
        /// Quantization levels per free state coordinate
        #[arg(long)]
        grid: Option<usize>,
        /// Write the machine-readable report here
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        render: RenderFlags,
    },
    /// Evaluate a checkpoint with the deterministic policy on true reward
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize finished runs into a cross-method table
    Report {
        /// Run directories containing summary.csv
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Rebuild the report from a previously written report.csv
        #[arg(long)]
        from_csv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    match s {
        "state_action" => Ok(Modality::StateAction),
        "state_only" => Ok(Modality::StateOnly),
        "frames" => Ok(Modality::Frames),
        other => Err(format!("unknown modality `{other}`")),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::TrainExpert { run } => {
            let cfg = run.load_base("cartpole_analog", HarnessMethod::ExpertTrpo)?;
            let outcome = harness::train_expert(&cfg).map_err(|e| e.to_string())?;
            println!(
                "expert on {}: mean return {:.3} +/- {:.3} over {} episodes",
                cfg.env,
                outcome.summary.mean_return,
                outcome.summary.std_return,
                outcome.summary.eval_episodes
            );
            Ok(())
        }
        Command::RecordDemos {
            checkpoint,
            env,
            n_trajs,
            modality,
            seed,
            out,
            render,
        } => {
            let map = render.build()?;
            let modality = parse_modality(&modality)?;
            let demos = harness::record_demos_to_file(
                &checkpoint,
                &env,
                modality,
                n_trajs,
                &map,
                seed,
                &out,
            )
            .map_err(|e| e.to_string())?;
            println!(
                "recorded {} {} trajectories ({} transitions) to {}",
                demos.trajectories.len(),
                demos.modality.as_str(),
                demos.total_transitions(),
                out.display()
            );
            Ok(())
        }
        Command::Imitate {
            method,
            demos,
            k_frames,
            disc_steps,
            run,
            render,
        } => {
            let method = HarnessMethod::parse(&method)
                .filter(|m| *m != HarnessMethod::ExpertTrpo)
                .ok_or_else(|| format!("unknown imitation method `{method}`"))?;
            let mut cfg = run.load_base("cartpole_analog", method)?;
            cfg.render = render.build()?;
            if let Some(d) = demos {
                cfg.demo_path = Some(d);
            }
            if let Some(k) = k_frames {
                cfg.adversarial.k_frames = k;
            }
            if let Some(s) = disc_steps {
                cfg.adversarial.disc_steps_per_iter = s;
            }
            let outcome = harness::imitate(&cfg).map_err(|e| e.to_string())?;
            println!(
                "{} on {}: mean return {:.3} +/- {:.3} over {} episodes",
                method.as_str(),
                cfg.env,
                outcome.summary.mean_return,
                outcome.summary.std_return,
                outcome.summary.eval_episodes
            );
            Ok(())
        }
        Command::IngestFrames {
            dir,
            crop,
            out_w,
            out_h,
            env_label,
            out,
        } => {
            let rect = crop.map(|v| CropRect {
                x: v[0],
                y: v[1],
                w: v[2],
                h: v[3],
            });
            let demos = harness::ingest_frames(&dir, rect, out_w, out_h, &env_label)
                .map_err(|e| e.to_string())?;
            vigan::rollout::save_demos(&demos, &out).map_err(|e| e.to_string())?;
            println!(
                "ingested {} frames into {}",
                demos.trajectories[0].frames.len(),
                out.display()
            );
            Ok(())
        }
        Command::VerifyInjectivity {
            env,
            grid,
            json,
            render,
        } => {
            let map = render.build()?;
            let per_dim = grid.unwrap_or(match env.as_str() {
                "cartpole_analog" => 5,
                _ => 22,
            });
            let report =
                harness::verify_injectivity(&env, &map, per_dim).map_err(|e| e.to_string())?;
            print!("{}", report.to_text());
            if let Some(path) = json {
                let doc = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
                std::fs::write(&path, doc).map_err(|e| e.to_string())?;
                println!("json report written to {}", path.display());
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let (mean, std) = harness::eval_checkpoint(&checkpoint, &env, episodes, seed)
                .map_err(|e| e.to_string())?;
            println!("mean return {mean:.3} +/- {std:.3} over {episodes} episodes");
            Ok(())
        }
        Command::Report {
            runs,
            from_csv,
            out,
        } => {
            let table = match from_csv {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
                    harness::ReportTable::from_csv(&text).map_err(|e| e.to_string())?
                }
                None => harness::ReportTable::from_run_dirs(&runs).map_err(|e| e.to_string())?,
            };
            harness::write_report(&table, &out).map_err(|e| e.to_string())?;
            print!("{}", table.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
