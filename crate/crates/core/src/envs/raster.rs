//! Tiny software rasterizer with anti-aliased coverage, enough to encode
//! continuous state into pixel intensities at sub-pixel precision.

use super::frame::Frame;

pub type Color = [u8; 3];

pub struct Canvas {
    pub frame: Frame,
}

impl Canvas {
    pub fn new(width: usize, height: usize, channels: usize, background: Color) -> Self {
        let mut frame = Frame::new(width, height, channels);
        let bg = channel_values(background, channels);
        for y in 0..height {
            for x in 0..width {
                for (c, &v) in bg.iter().enumerate() {
                    frame.set(x, y, c, v);
                }
            }
        }
        Canvas { frame }
    }

    /// Alpha-blend a color into one pixel; coverage in [0, 1].
    pub fn blend(&mut self, x: usize, y: usize, color: Color, coverage: f64) {
        if x >= self.frame.width || y >= self.frame.height || coverage <= 0.0 {
            return;
        }
        let cov = coverage.min(1.0);
        let vals = channel_values(color, self.frame.channels);
        for (c, &v) in vals.iter().enumerate() {
            let old = self.frame.get(x, y, c) as f64;
            let new = old * (1.0 - cov) + v as f64 * cov;
            self.frame.set(x, y, c, new.round().clamp(0.0, 255.0) as u8);
        }
    }

    /// Opaque axis-aligned rectangle in whole pixels (used for occluders).
    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, color: Color) {
        for y in y0..(y0 + h).min(self.frame.height) {
            for x in x0..(x0 + w).min(self.frame.width) {
                self.blend(x, y, color, 1.0);
            }
        }
    }

    /// Anti-aliased filled disk; center in pixel coordinates.
    pub fn draw_disk(&mut self, cx: f64, cy: f64, radius: f64, color: Color) {
        let x_min = (cx - radius - 1.0).floor().max(0.0) as usize;
        let x_max = ((cx + radius + 1.0).ceil() as usize).min(self.frame.width.saturating_sub(1));
        let y_min = (cy - radius - 1.0).floor().max(0.0) as usize;
        let y_max = ((cy + radius + 1.0).ceil() as usize).min(self.frame.height.saturating_sub(1));
        for y in y_min..=y_max.min(self.frame.height.saturating_sub(1)) {
            for x in x_min..=x_max {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let dist = (dx * dx + dy * dy).sqrt();
                let cov = (radius + 0.5 - dist).clamp(0.0, 1.0);
                self.blend(x, y, color, cov);
            }
        }
    }

    /// Anti-aliased line segment with the given half-width.
    pub fn draw_line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, half_width: f64, color: Color) {
        let pad = half_width + 1.0;
        let x_min = (x0.min(x1) - pad).floor().max(0.0) as usize;
        let x_max = ((x0.max(x1) + pad).ceil() as usize).min(self.frame.width.saturating_sub(1));
        let y_min = (y0.min(y1) - pad).floor().max(0.0) as usize;
        let y_max = ((y0.max(y1) + pad).ceil() as usize).min(self.frame.height.saturating_sub(1));
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = dx * dx + dy * dy;
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (x0 + t * dx, y0 + t * dy);
                let dist = ((px - qx).powi(2) + (py - qy).powi(2)).sqrt();
                let cov = (half_width + 0.5 - dist).clamp(0.0, 1.0);
                self.blend(x, y, color, cov);
            }
        }
    }

    /// One-pixel-tall horizontal gauge bar on row `y`: `value01` selects the
    /// filled length, with the fractional end pixel anti-aliased so nearby
    /// values stay distinguishable after quantization.
    pub fn draw_gauge(&mut self, y: usize, value01: f64, color: Color) {
        let w = self.frame.width;
        let filled = value01.clamp(0.0, 1.0) * (w - 1) as f64;
        for x in 0..w {
            let cov = (filled - x as f64).clamp(0.0, 1.0);
            if cov > 0.0 {
                self.blend(x, y, color, cov);
            } else {
                break;
            }
        }
    }
}

fn channel_values(color: Color, channels: usize) -> Vec<u8> {
    if channels == 3 {
        color.to_vec()
    } else {
        // Rec. 601 luma
        let l = 0.299 * color[0] as f64 + 0.587 * color[1] as f64 + 0.114 * color[2] as f64;
        vec![l.round().clamp(0.0, 255.0) as u8]
    }
}
