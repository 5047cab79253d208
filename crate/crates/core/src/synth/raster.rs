//! Shape rasterization and the fixed image pipeline primitives: filled
//! shapes without anti-aliasing (later shapes overwrite earlier ones), box
//! blur with zero padding, bilinear resize with half-pixel centers,
//! luminance greyscale.

/// RGB canvas with a coverage mask so the background color can be assigned
/// to untouched pixels after all shapes are drawn.
pub struct Canvas {
    pub size: usize,
    pub rgb: Vec<[u8; 3]>,
    pub covered: Vec<bool>,
}

impl Canvas {
    pub fn new(size: usize) -> Self {
        Canvas {
            size,
            rgb: vec![[0, 0, 0]; size * size],
            covered: vec![false; size * size],
        }
    }

    #[inline]
    fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let idx = y * self.size + x;
        self.rgb[idx] = color;
        self.covered[idx] = true;
    }

    pub fn fill_background(&mut self, color: [u8; 3]) {
        for (px, cov) in self.rgb.iter_mut().zip(self.covered.iter()) {
            if !cov {
                *px = color;
            }
        }
    }

    /// Integer box fill, clipped to the canvas.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, color: [u8; 3]) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                self.put(x, y, color);
            }
        }
    }

    /// Filled ellipse with center (cx, cy) and semi-axes (a, b); pixel
    /// centers at (x + 0.5, y + 0.5).
    pub fn fill_ellipse(&mut self, cx: f64, cy: f64, a: f64, b: f64, color: [u8; 3]) {
        let x_lo = ((cx - a).floor().max(0.0)) as usize;
        let x_hi = ((cx + a).ceil().min(self.size as f64)) as usize;
        let y_lo = ((cy - b).floor().max(0.0)) as usize;
        let y_hi = ((cy + b).ceil().min(self.size as f64)) as usize;
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let dx = (x as f64 + 0.5 - cx) / a;
                let dy = (y as f64 + 0.5 - cy) / b;
                if dx * dx + dy * dy <= 1.0 {
                    self.put(x, y, color);
                }
            }
        }
    }

    /// Filled triangle via edge functions; a pixel belongs to the triangle
    /// when its center lies inside or on the boundary.
    pub fn fill_triangle(&mut self, v: [(f64, f64); 3], color: [u8; 3]) {
        let (x_min, x_max) = v
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let (y_min, y_max) = v
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        let x_lo = x_min.floor().max(0.0) as usize;
        let x_hi = (x_max.ceil().min(self.size as f64)) as usize;
        let y_lo = y_min.floor().max(0.0) as usize;
        let y_hi = (y_max.ceil().min(self.size as f64)) as usize;
        let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| -> f64 {
            (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
        };
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let e0 = edge(v[0], v[1], p);
                let e1 = edge(v[1], v[2], p);
                let e2 = edge(v[2], v[0], p);
                let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
                    || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
                if inside {
                    self.put(x, y, color);
                }
            }
        }
    }

    /// Planes as f32 (channel, row-major), still in 0..255.
    pub fn to_f32_planes(&self) -> Vec<Vec<f32>> {
        let mut planes = vec![vec![0f32; self.size * self.size]; 3];
        for (i, px) in self.rgb.iter().enumerate() {
            for c in 0..3 {
                planes[c][i] = px[c] as f32;
            }
        }
        planes
    }
}

/// k x k box blur with zero padding; the window for output (y, x) starts at
/// (y - k/2, x - k/2).
pub fn box_blur(plane: &[f32], size: usize, k: usize) -> Vec<f32> {
    if k <= 1 {
        return plane.to_vec();
    }
    let off = (k / 2) as isize;
    let norm = 1.0 / (k * k) as f32;
    let mut out = vec![0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0f32;
            for dy in 0..k as isize {
                let sy = y as isize - off + dy;
                if sy < 0 || sy >= size as isize {
                    continue;
                }
                for dx in 0..k as isize {
                    let sx = x as isize - off + dx;
                    if sx < 0 || sx >= size as isize {
                        continue;
                    }
                    acc += plane[sy as usize * size + sx as usize];
                }
            }
            out[y * size + x] = acc * norm;
        }
    }
    out
}

/// Bilinear resize with half-pixel center alignment, clamped at the edges.
pub fn resize_bilinear(plane: &[f32], src: usize, dst: usize) -> Vec<f32> {
    if src == dst {
        return plane.to_vec();
    }
    let scale = src as f64 / dst as f64;
    let mut out = vec![0f32; dst * dst];
    for oy in 0..dst {
        let sy = ((oy as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src - 1);
        let fy = (sy - y0 as f64) as f32;
        for ox in 0..dst {
            let sx = ((ox as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            let fx = (sx - x0 as f64) as f32;
            let p00 = plane[y0 * src + x0];
            let p01 = plane[y0 * src + x1];
            let p10 = plane[y1 * src + x0];
            let p11 = plane[y1 * src + x1];
            let top = p00 + fx * (p01 - p00);
            let bot = p10 + fx * (p11 - p10);
            out[oy * dst + ox] = top + fy * (bot - top);
        }
    }
    out
}

/// Standard luminance weighting.
pub fn to_grey(r: &[f32], g: &[f32], b: &[f32]) -> Vec<f32> {
    r.iter()
        .zip(g.iter())
        .zip(b.iter())
        .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect()
}
