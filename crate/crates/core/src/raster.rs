//! Small raster primitives shared by the effects and the plot writer.

use crate::seed::fnv1a64;

/// A single-channel `f32` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[self.idx(x, y)]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Rasterize an anti-aliased segment of the given width, combining with
    /// the existing coverage by per-pixel maximum.
    pub fn draw_segment_max(&mut self, a: (f64, f64), b: (f64, f64), width: f64, value: f32) {
        self.draw_segment_with(a, b, width, |dst, coverage| {
            *dst = dst.max(value * coverage);
        });
    }

    /// Rasterize an anti-aliased segment, calling `blend(pixel, coverage)`
    /// for every touched pixel with coverage in `(0, 1]`.
    pub fn draw_segment_with(
        &mut self,
        a: (f64, f64),
        b: (f64, f64),
        width: f64,
        mut blend: impl FnMut(&mut f32, f32),
    ) {
        let w = self.width as usize;
        let data = &mut self.data;
        for_each_segment_pixel(self.width, self.height, a, b, width, |x, y, coverage| {
            blend(&mut data[y as usize * w + x as usize], coverage);
        });
    }
}

/// Visit every pixel of a `width x height` grid covered by an anti-aliased
/// segment, with coverage `clamp(half_width + 0.5 - distance, 0, 1) > 0`.
pub fn for_each_segment_pixel(
    width: u32,
    height: u32,
    a: (f64, f64),
    b: (f64, f64),
    line_width: f64,
    mut visit: impl FnMut(u32, u32, f32),
) {
    if width == 0 || height == 0 {
        return;
    }
    let half = line_width / 2.0;
    let reach = half + 1.0;
    let x_lo = (a.0.min(b.0) - reach).floor().max(0.0);
    let x_hi = (a.0.max(b.0) + reach).ceil().min(f64::from(width - 1));
    let y_lo = (a.1.min(b.1) - reach).floor().max(0.0);
    let y_hi = (a.1.max(b.1) + reach).ceil().min(f64::from(height - 1));
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    for y in y_lo as u32..=y_hi as u32 {
        for x in x_lo as u32..=x_hi as u32 {
            let d = distance_to_segment((f64::from(x), f64::from(y)), a, b);
            let coverage = (half + 0.5 - d).clamp(0.0, 1.0) as f32;
            if coverage > 0.0 {
                visit(x, y, coverage);
            }
        }
    }
}

pub fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Deterministic lattice value in `[-1, 1]`.
fn lattice_value(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut buf = [0u8; 24];
    buf[..8].copy_from_slice(&seed.to_le_bytes());
    buf[8..16].copy_from_slice(&ix.to_le_bytes());
    buf[16..].copy_from_slice(&iy.to_le_bytes());
    let h = fnv1a64(&buf);
    // top 53 bits -> [0, 1)
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    unit * 2.0 - 1.0
}

/// Value noise: a seeded random lattice with spacing `scale_px`, bilinearly
/// interpolated. Output lies in `[-1, 1]` and is continuous.
pub fn value_noise(seed: u64, x: f64, y: f64, scale_px: f64) -> f64 {
    let gx = x / scale_px;
    let gy = y / scale_px;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice_value(seed, ix, iy);
    let v10 = lattice_value(seed, ix + 1, iy);
    let v01 = lattice_value(seed, ix, iy + 1);
    let v11 = lattice_value(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur of an interleaved image with `channels`
/// channels, edge-clamped.
pub fn gaussian_blur(data: &[f32], width: u32, height: u32, channels: usize, sigma: f64) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (width as i64, height as i64);
    let mut tmp = vec![0.0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let sx = (x + k as i64 - r).clamp(0, w - 1);
                    acc += kv * data[((y * w + sx) as usize) * channels + c];
                }
                tmp[((y * w + x) as usize) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let sy = (y + k as i64 - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * channels + c];
                }
                out[((y * w + x) as usize) * channels + c] = acc;
            }
        }
    }
    out
}
