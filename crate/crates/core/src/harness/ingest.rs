//! External frame ingestion: a directory of P6 PPM frames becomes a
//! frames-modality demonstration set after crop and resize. No framerate
//! or timing metadata is consumed — only the lexicographic frame order.

use std::io::BufReader;
use std::path::Path;

use crate::envs::{read_ppm, resize_and_crop, CropRect, Frame};
use crate::rollout::{DemoSet, DemoTrajectory, Modality};

use super::HarnessError;

pub fn ingest_frames(
    dir: &Path,
    crop: Option<CropRect>,
    out_w: usize,
    out_h: usize,
    env_label: &str,
) -> Result<DemoSet, HarnessError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| {
            let p = entry.ok()?.path();
            (p.extension().and_then(|e| e.to_str()) == Some("ppm")).then_some(p)
        })
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(HarnessError::Ingest(format!(
            "{} holds {} ppm frames; at least 2 are required",
            dir.display(),
            paths.len()
        )));
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    let mut geometry: Option<(usize, usize)> = None;
    for p in &paths {
        let file = std::fs::File::open(p)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
        let frame = read_ppm(&mut BufReader::new(file)).map_err(|e| {
            HarnessError::Ingest(format!("{}: {e}", p.display()))
        })?;
        match geometry {
            None => geometry = Some((frame.width, frame.height)),
            Some((w, h)) if (frame.width, frame.height) != (w, h) => {
                return Err(HarnessError::Ingest(format!(
                    "{}: frame is {}x{} but earlier frames are {}x{}",
                    p.display(),
                    frame.width,
                    frame.height,
                    w,
                    h
                )));
            }
            _ => {}
        }
        let rect = crop.unwrap_or_else(|| frame.full_rect());
        frames.push(resize_and_crop(&frame, rect, out_w, out_h)?);
    }
    let demos = DemoSet {
        env_id: env_label.to_string(),
        modality: Modality::Frames,
        state_dim: 0,
        action_dim: 0,
        frame_width: out_w,
        frame_height: out_h,
        frame_channels: 3,
        trajectories: vec![DemoTrajectory {
            frames,
            ..Default::default()
        }],
    };
    demos
        .validate()
        .map_err(crate::rollout::RolloutError::Demo)?;
    Ok(demos)
}
