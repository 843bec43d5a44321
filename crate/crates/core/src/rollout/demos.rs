//! Expert demonstration sets and the VIGD container format.
//!
//! Layout, integers little-endian: magic `VIGD`, version u32, env id
//! (length u32 + UTF-8), modality u8, trajectory count u32, state dim u32,
//! action dim u32, frame width/height/channels u32 each; then per
//! trajectory: T u32 followed by the modality's arrays — states as
//! (T+1)*state_dim f64, actions as T*action_dim f64, log-probs as T f64,
//! frames as (T+1) raw W*H*C byte blocks. Round trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::envs::Frame;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("bad magic: expected VIGD, found {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported version {0}")]
    VersionMismatch(u32),
    #[error("truncated payload")]
    Truncated,
    #[error("unknown modality tag {0}")]
    BadModality(u8),
    #[error("inconsistent demo set: {0}")]
    Inconsistent(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    StateAction,
    StateOnly,
    Frames,
}

impl Modality {
    pub fn tag(&self) -> u8 {
        match self {
            Modality::StateAction => 0,
            Modality::StateOnly => 1,
            Modality::Frames => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, DemoError> {
        match tag {
            0 => Ok(Modality::StateAction),
            1 => Ok(Modality::StateOnly),
            2 => Ok(Modality::Frames),
            other => Err(DemoError::BadModality(other)),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::StateAction => "state_action",
            Modality::StateOnly => "state_only",
            Modality::Frames => "frames",
        }
    }
}

/// One expert trajectory in whichever modality the set carries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemoTrajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub frames: Vec<Frame>,
}

impl DemoTrajectory {
    /// Number of transitions T.
    pub fn len(&self) -> usize {
        if !self.actions.is_empty() {
            self.actions.len()
        } else if !self.states.is_empty() {
            self.states.len() - 1
        } else {
            self.frames.len().saturating_sub(1)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub env_id: String,
    pub modality: Modality,
    pub state_dim: usize,
    pub action_dim: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_channels: usize,
    pub trajectories: Vec<DemoTrajectory>,
}

impl DemoSet {
    pub fn validate(&self) -> Result<(), DemoError> {
        for (i, tr) in self.trajectories.iter().enumerate() {
            let t = tr.len();
            let fail = |msg: String| Err(DemoError::Inconsistent(format!("trajectory {i}: {msg}")));
            match self.modality {
                Modality::StateAction => {
                    if tr.states.len() != t + 1 || tr.actions.len() != t || tr.log_probs.len() != t
                    {
                        return fail("state/action/log-prob lengths disagree".into());
                    }
                    if tr.states.iter().any(|s| s.len() != self.state_dim)
                        || tr.actions.iter().any(|a| a.len() != self.action_dim)
                    {
                        return fail("dimension mismatch".into());
                    }
                }
                Modality::StateOnly => {
                    if tr.states.len() != t + 1 || !tr.actions.is_empty() {
                        return fail("state-only trajectory carries actions".into());
                    }
                    if tr.states.iter().any(|s| s.len() != self.state_dim) {
                        return fail("dimension mismatch".into());
                    }
                }
                Modality::Frames => {
                    if tr.frames.is_empty() {
                        return fail("no frames".into());
                    }
                    if tr.frames.iter().any(|f| {
                        f.width != self.frame_width
                            || f.height != self.frame_height
                            || f.channels != self.frame_channels
                    }) {
                        return fail("frame geometry mismatch".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}

const MAGIC: &[u8; 4] = b"VIGD";
const VERSION: u32 = 1;

pub fn save_demos(demos: &DemoSet, path: &Path) -> Result<(), DemoError> {
    demos.validate()?;
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(demos.env_id.len() as u32).map_err(io_err)?;
    w.write_all(demos.env_id.as_bytes()).map_err(io_err)?;
    w.write_u8(demos.modality.tag()).map_err(io_err)?;
    w.write_u32::<LittleEndian>(demos.trajectories.len() as u32).map_err(io_err)?;
    for v in [
        demos.state_dim,
        demos.action_dim,
        demos.frame_width,
        demos.frame_height,
        demos.frame_channels,
    ] {
        w.write_u32::<LittleEndian>(v as u32).map_err(io_err)?;
    }
    for tr in &demos.trajectories {
        w.write_u32::<LittleEndian>(tr.len() as u32).map_err(io_err)?;
        match demos.modality {
            Modality::StateAction => {
                write_f64s(&mut w, tr.states.iter().flatten())?;
                write_f64s(&mut w, tr.actions.iter().flatten())?;
                write_f64s(&mut w, tr.log_probs.iter())?;
            }
            Modality::StateOnly => write_f64s(&mut w, tr.states.iter().flatten())?,
            Modality::Frames => {
                for f in &tr.frames {
                    w.write_all(&f.pixels).map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<DemoSet, DemoError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(DemoError::BadMagic(magic.to_vec()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof)?;
    if version != VERSION {
        return Err(DemoError::VersionMismatch(version));
    }
    let id_len = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut id_bytes = vec![0u8; id_len];
    r.read_exact(&mut id_bytes).map_err(eof)?;
    let env_id = String::from_utf8(id_bytes)
        .map_err(|_| DemoError::Inconsistent("env id is not UTF-8".into()))?;
    let modality = Modality::from_tag(r.read_u8().map_err(eof)?)?;
    let n_traj = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    }
    let [state_dim, action_dim, frame_width, frame_height, frame_channels] = dims;

    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let t = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let mut tr = DemoTrajectory::default();
        match modality {
            Modality::StateAction => {
                tr.states = read_rows(&mut r, t + 1, state_dim)?;
                tr.actions = read_rows(&mut r, t, action_dim)?;
                tr.log_probs = read_f64s(&mut r, t)?;
            }
            Modality::StateOnly => {
                tr.states = read_rows(&mut r, t + 1, state_dim)?;
            }
            Modality::Frames => {
                for _ in 0..t + 1 {
                    let mut pixels = vec![0u8; frame_width * frame_height * frame_channels];
                    r.read_exact(&mut pixels).map_err(eof)?;
                    tr.frames.push(Frame {
                        width: frame_width,
                        height: frame_height,
                        channels: frame_channels,
                        pixels,
                    });
                }
            }
        }
        trajectories.push(tr);
    }
    let demos = DemoSet {
        env_id,
        modality,
        state_dim,
        action_dim,
        frame_width,
        frame_height,
        frame_channels,
        trajectories,
    };
    demos.validate()?;
    Ok(demos)
}

fn io_err(e: io::Error) -> DemoError {
    DemoError::Io(e.to_string())
}

fn eof(e: io::Error) -> DemoError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        DemoError::Truncated
    } else {
        DemoError::Io(e.to_string())
    }
}

fn write_f64s<'a>(
    w: &mut impl Write,
    vals: impl Iterator<Item = &'a f64>,
) -> Result<(), DemoError> {
    for &v in vals {
        w.write_f64::<LittleEndian>(v).map_err(io_err)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, DemoError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>().map_err(eof)?);
    }
    Ok(out)
}

fn read_rows(r: &mut impl Read, rows: usize, dim: usize) -> Result<Vec<Vec<f64>>, DemoError> {
    (0..rows).map(|_| read_f64s(r, dim)).collect()
}
