//! Raw frames, binary PPM export, and the two bilinear resampling
//! operations (external-frame crop/resize and crop-shake noise).
//!
//! Bilinear samples use the align-centers convention and round half away
//! from zero, so a full-frame same-size resize is an exact identity.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::EnvError;

/// Interleaved row-major pixel buffer (HWC), u8 per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

/// Integer pixel rectangle inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3);
        Frame {
            width,
            height,
            channels,
            pixels: vec![0; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Planar CHW buffer normalized to [-1, 1] for conv nets.
    pub fn to_chw_normalized(&self) -> Vec<f64> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; w * h * c];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ci * h + y) * w + x] =
                        self.pixels[(y * w + x) * c + ci] as f64 / 127.5 - 1.0;
                }
            }
        }
        out
    }

    pub fn full_rect(&self) -> CropRect {
        CropRect {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }
}

/// Bilinear resize of `rect` within `frame` to `out_w` x `out_h`.
pub fn resize_and_crop(
    frame: &Frame,
    rect: CropRect,
    out_w: usize,
    out_h: usize,
) -> Result<Frame, EnvError> {
    if rect.w == 0 || rect.h == 0 || out_w == 0 || out_h == 0 {
        return Err(EnvError::EmptyRect);
    }
    if rect.x + rect.w > frame.width || rect.y + rect.h > frame.height {
        return Err(EnvError::RectOutOfBounds);
    }
    let c = frame.channels;
    let mut out = Frame::new(out_w, out_h, c);
    for oy in 0..out_h {
        let v = (oy as f64 + 0.5) * rect.h as f64 / out_h as f64 - 0.5;
        let y0 = v.floor();
        let fy = v - y0;
        let ya = clamp_idx(y0, rect.h) + rect.y;
        let yb = clamp_idx(y0 + 1.0, rect.h) + rect.y;
        for ox in 0..out_w {
            let u = (ox as f64 + 0.5) * rect.w as f64 / out_w as f64 - 0.5;
            let x0 = u.floor();
            let fx = u - x0;
            let xa = clamp_idx(x0, rect.w) + rect.x;
            let xb = clamp_idx(x0 + 1.0, rect.w) + rect.x;
            for ci in 0..c {
                let p00 = frame.get(xa, ya, ci) as f64;
                let p01 = frame.get(xb, ya, ci) as f64;
                let p10 = frame.get(xa, yb, ci) as f64;
                let p11 = frame.get(xb, yb, ci) as f64;
                let val = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01)
                    + fy * ((1.0 - fx) * p10 + fx * p11);
                out.set(ox, oy, ci, val.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

fn clamp_idx(v: f64, len: usize) -> usize {
    if v <= 0.0 {
        0
    } else if v >= (len - 1) as f64 {
        len - 1
    } else {
        v as usize
    }
}

/// Camera-shake noise: each side is cropped by an independent uniform
/// fraction in [0, max_frac] (in whole pixels), then the region is resized
/// back to the original geometry. Draw order: left, right, top, bottom.
pub fn crop_shake(frame: &Frame, max_frac: f64, rng: &mut ChaCha8Rng) -> Result<Frame, EnvError> {
    if !(0.0..=0.25).contains(&max_frac) {
        return Err(EnvError::BadConfig(format!(
            "crop_shake max_frac {max_frac} outside [0, 0.25]"
        )));
    }
    let (w, h) = (frame.width as f64, frame.height as f64);
    let l = (rng.gen::<f64>() * max_frac * w).floor() as usize;
    let r = (rng.gen::<f64>() * max_frac * w).floor() as usize;
    let t = (rng.gen::<f64>() * max_frac * h).floor() as usize;
    let b = (rng.gen::<f64>() * max_frac * h).floor() as usize;
    let rect = CropRect {
        x: l,
        y: t,
        w: frame.width - l - r,
        h: frame.height - t - b,
    };
    resize_and_crop(frame, rect, frame.width, frame.height)
}

/// Binary PPM (P6). Grayscale frames are written with replicated channels.
pub fn write_ppm(frame: &Frame, w: &mut impl Write) -> std::io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    if frame.channels == 3 {
        w.write_all(&frame.pixels)?;
    } else {
        let mut buf = Vec::with_capacity(frame.width * frame.height * 3);
        for &p in &frame.pixels {
            buf.extend_from_slice(&[p, p, p]);
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Parses a P6 PPM with maxval 255; comments (`#`) allowed in the header.
pub fn read_ppm(r: &mut impl BufRead) -> Result<Frame, EnvError> {
    let magic = [next_header_token(r)?, next_header_token(r)?];
    if magic[0] != "P6" {
        return Err(EnvError::MalformedPpm(format!(
            "bad magic {:?}, expected P6",
            magic[0]
        )));
    }
    let width: usize = magic[1]
        .parse()
        .map_err(|_| EnvError::MalformedPpm("bad width".into()))?;
    let height: usize = next_header_token(r)?
        .parse()
        .map_err(|_| EnvError::MalformedPpm("bad height".into()))?;
    let maxval: usize = next_header_token(r)?
        .parse()
        .map_err(|_| EnvError::MalformedPpm("bad maxval".into()))?;
    if maxval != 255 {
        return Err(EnvError::MalformedPpm(format!(
            "unsupported maxval {maxval}"
        )));
    }
    let mut pixels = vec![0u8; width * height * 3];
    r.read_exact(&mut pixels)
        .map_err(|_| EnvError::MalformedPpm("truncated pixel data".into()))?;
    Ok(Frame {
        width,
        height,
        channels: 3,
        pixels,
    })
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
/// The final token is terminated by exactly one whitespace byte, which is
/// how P6 separates the header from pixel data.
fn next_header_token(r: &mut impl BufRead) -> Result<String, EnvError> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte).map_err(|e| EnvError::Io(e.to_string()))? == 0 {
            if tok.is_empty() {
                return Err(EnvError::MalformedPpm("unexpected end of header".into()));
            }
            return Ok(tok);
        }
        let ch = byte[0] as char;
        if in_comment {
            if ch == '\n' {
                in_comment = false;
            }
            continue;
        }
        if ch == '#' {
            in_comment = true;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(ch);
    }
}
