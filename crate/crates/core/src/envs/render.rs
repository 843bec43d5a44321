//! The render mapping g: S -> I. Injective mode encodes every state
//! coordinate in the frame (anti-aliased geometry plus gauge strips for
//! coordinates with no natural pixels, like velocities). Occluding mode
//! drops the gauges and paints an occluder rectangle last; axis-degenerate
//! mode ignores one designated state coordinate entirely.

use serde::{Deserialize, Serialize};

use super::raster::{Canvas, Color};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Injective,
    Occluding,
    AxisDegenerate,
}

/// Rectangle in frame fractions, resolution independent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FracRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Palette {
    pub background: Color,
    pub agent: Color,
    pub accent: Color,
    pub occluder: Color,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            background: [0, 0, 0],
            agent: [255, 255, 255],
            accent: [220, 220, 90],
            occluder: [110, 110, 110],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub mode: RenderMode,
    pub occluder: FracRect,
    /// Per-side crop fraction bound for camera-shake noise on recorded demos.
    pub crop_shake_max: f64,
    pub palette: Palette,
}

impl Default for RenderMap {
    fn default() -> Self {
        RenderMap {
            width: 64,
            height: 64,
            channels: 3,
            mode: RenderMode::Injective,
            occluder: FracRect {
                x: 0.55,
                y: 0.0,
                w: 0.45,
                h: 1.0,
            },
            crop_shake_max: 0.0,
            palette: Palette::default(),
        }
    }
}

impl RenderMap {
    pub fn sized(width: usize, height: usize, channels: usize) -> Self {
        RenderMap {
            width,
            height,
            channels,
            ..RenderMap::default()
        }
    }

    /// Fast-CI geometry: 32x32 grayscale.
    pub fn fast() -> Self {
        RenderMap::sized(32, 32, 1)
    }

    pub fn with_mode(mut self, mode: RenderMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::new(self.width, self.height, self.channels, self.palette.background)
    }

    pub fn gauges_enabled(&self) -> bool {
        !matches!(self.mode, RenderMode::Occluding)
    }

    /// Paints the occluder rectangle; call last, only in occluding mode.
    pub fn apply_occluder(&self, canvas: &mut Canvas) {
        let x0 = (self.occluder.x * self.width as f64).floor().max(0.0) as usize;
        let y0 = (self.occluder.y * self.height as f64).floor().max(0.0) as usize;
        let w = (self.occluder.w * self.width as f64).ceil() as usize;
        let h = (self.occluder.h * self.height as f64).ceil() as usize;
        canvas.fill_rect(x0, y0, w, h, self.palette.occluder);
    }

    /// Marks that a state coordinate left its declared box (the drawn
    /// geometry is clamped, so make the event visible).
    pub fn saturation_marker(&self, canvas: &mut Canvas) {
        canvas.blend(0, 0, self.palette.accent, 1.0);
    }
}

/// Draws one gauge strip per coordinate on the bottom rows (two-pixel
/// spacing keeps the anti-aliased geometry from bleeding into them).
/// Returns true if any coordinate had to be clamped to its box.
pub fn draw_gauges(canvas: &mut Canvas, map: &RenderMap, coords: &[(f64, f64, f64)]) -> bool {
    let mut clamped = false;
    for (i, &(v, lo, hi)) in coords.iter().enumerate() {
        if v < lo || v > hi {
            clamped = true;
        }
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        let y = map.height - 1 - 2 * i;
        canvas.draw_gauge(y, t, map.palette.agent);
    }
    clamped
}
