//! Lens soiling: soft dark particles fixed to the lens.

use rand::Rng;

use crate::config::Parameters;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::rng_from_seed;

use super::{positive, unit_interval, ParamReader};

#[derive(Clone, Debug, PartialEq)]
pub struct SoilingParams {
    pub num_particles: usize,
    pub radius_px: (f64, f64),
    pub opacity: (f64, f64),
    pub color: [f32; 3],
}

impl Default for SoilingParams {
    fn default() -> Self {
        Self {
            num_particles: 40,
            radius_px: (10.0, 40.0),
            opacity: (0.5, 0.9),
            color: [0.24, 0.18, 0.12],
        }
    }
}

impl SoilingParams {
    pub const KEYS: &'static [&'static str] = &[
        "num_particles",
        "radius_min_px",
        "radius_max_px",
        "opacity_min",
        "opacity_max",
        "color",
    ];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "lens_soiling", Self::KEYS)?;
        let d = Self::default();
        let radius_px = r.range_or("radius_min_px", "radius_max_px", d.radius_px)?;
        positive("radius_min_px", radius_px.0)?;
        let opacity = r.range_or("opacity_min", "opacity_max", d.opacity)?;
        unit_interval("opacity_min", opacity.0)?;
        unit_interval("opacity_max", opacity.1)?;
        Ok(Self {
            num_particles: r.usize_or("num_particles", d.num_particles)?,
            radius_px,
            opacity,
            color: r.rgb_or("color", d.color)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub center: (f64, f64),
    pub radius: f64,
    pub opacity: f64,
    pub color: [f32; 3],
}

/// Rendered overlay: per-pixel alpha and the colour of the particle that
/// determines it.
#[derive(Clone, Debug, PartialEq)]
pub struct SoilingOverlay {
    pub width: u32,
    pub height: u32,
    pub particles: Vec<Particle>,
    pub alpha: Vec<f32>,
    pub color: Vec<[f32; 3]>,
}

impl SoilingOverlay {
    pub fn from_particles(width: u32, height: u32, particles: Vec<Particle>) -> Self {
        let n = width as usize * height as usize;
        let mut alpha = vec![0.0f32; n];
        let mut color = vec![[0.0f32; 3]; n];
        for p in &particles {
            let sigma = p.radius / 2.0;
            let reach = 3.0 * sigma;
            let x0 = (p.center.0 - reach).floor().max(0.0) as u32;
            let y0 = (p.center.1 - reach).floor().max(0.0) as u32;
            let x1 = ((p.center.0 + reach).ceil() as i64).min(i64::from(width) - 1);
            let y1 = ((p.center.1 + reach).ceil() as i64).min(i64::from(height) - 1);
            for y in y0 as i64..=y1 {
                for x in x0 as i64..=x1 {
                    let r2 = (x as f64 - p.center.0).powi(2) + (y as f64 - p.center.1).powi(2);
                    let a = (p.opacity * (-r2 / (2.0 * sigma * sigma)).exp()) as f32;
                    let i = y as usize * width as usize + x as usize;
                    if a > alpha[i] {
                        alpha[i] = a;
                        color[i] = p.color;
                    }
                }
            }
        }
        Self {
            width,
            height,
            particles,
            alpha,
            color,
        }
    }
}

pub fn soiling_generate(width: u32, height: u32, params: &SoilingParams, seed: u64) -> SoilingOverlay {
    let mut rng = rng_from_seed(seed);
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| lo + rng.random::<f64>() * (hi - lo);
    let particles = (0..params.num_particles)
        .map(|_| Particle {
            center: (
                rng.random::<f64>() * f64::from(width),
                rng.random::<f64>() * f64::from(height),
            ),
            radius: uniform(&mut rng, params.radius_px),
            opacity: uniform(&mut rng, params.opacity),
            color: params.color,
        })
        .collect();
    SoilingOverlay::from_particles(width, height, particles)
}

pub fn soiling_apply(image: &Image, overlay: &SoilingOverlay) -> Result<Image> {
    if image.dimensions() != (overlay.width, overlay.height) {
        return Err(Error::DimensionMismatch {
            expected: (overlay.width, overlay.height),
            actual: image.dimensions(),
        });
    }
    let mut out = image.clone();
    for ((px, &a), col) in out.data_mut().chunks_exact_mut(3).zip(&overlay.alpha).zip(&overlay.color) {
        if a > 0.0 {
            for (c, k) in px.iter_mut().zip(col) {
                *c = (*c * (1.0 - a) + k * a).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_blending_of_coincident_particles() {
        let p = |opacity| Particle {
            center: (10.0, 10.0),
            radius: 6.0,
            opacity,
            color: [0.0; 3],
        };
        let o = SoilingOverlay::from_particles(21, 21, vec![p(0.5), p(0.8)]);
        assert!((o.alpha[10 * 21 + 10] - 0.8).abs() < 1e-6);
        assert!(o.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn half_alpha_black_halves_brightness() {
        let mut o = SoilingOverlay::from_particles(2, 1, vec![]);
        o.alpha[0] = 0.5;
        let img = Image::filled(2, 1, [0.8; 3]);
        let out = soiling_apply(&img, &o).unwrap();
        assert!((out.get(0, 0)[0] - 0.4).abs() < 1e-6);
        assert_eq!(out.get(1, 0), [0.8; 3]);
    }
}
