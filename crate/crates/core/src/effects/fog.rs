//! Depth-aware fog from the Koschmieder scattering law.
//!
//! Transmission `t = exp(-beta * d)` with `beta = 3.912 / V` for a
//! meteorological visibility `V`, and `I = J * t + A * (1 - t)`.

use crate::config::Parameters;
use crate::error::Result;
use crate::image::Image;
use crate::raster::value_noise;

use super::{positive, unit_interval, ParamReader};

/// `-ln(0.02)`: the contrast threshold that defines meteorological visibility.
pub const KOSCHMIEDER_CONSTANT: f64 = 3.912;

#[derive(Clone, Debug, PartialEq)]
pub struct FogParams {
    pub visibility_m: f64,
    pub atmospheric_light: f64,
    pub heterogeneous: bool,
    pub heterogeneity_amplitude: f64,
    pub noise_scale_px: f64,
}

impl FogParams {
    pub fn new(visibility_m: f64) -> Self {
        Self {
            visibility_m,
            atmospheric_light: 0.9,
            heterogeneous: false,
            heterogeneity_amplitude: 0.3,
            noise_scale_px: 64.0,
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "visibility_m",
        "atmospheric_light",
        "heterogeneous",
        "heterogeneity_amplitude",
        "noise_scale_px",
        "depth_fallback_m",
    ];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "fog", Self::KEYS)?;
        let d = Self::new(0.0);
        let amp = r.f64_or("heterogeneity_amplitude", d.heterogeneity_amplitude)?;
        if !(0.0..1.0).contains(&amp) {
            return Err(crate::Error::param("heterogeneity_amplitude", "must be in [0, 1)"));
        }
        Ok(Self {
            visibility_m: positive("visibility_m", r.f64_req("visibility_m")?)?,
            atmospheric_light: unit_interval("atmospheric_light", r.f64_or("atmospheric_light", d.atmospheric_light)?)?,
            heterogeneous: r.bool_or("heterogeneous", false)?,
            heterogeneity_amplitude: amp,
            noise_scale_px: positive("noise_scale_px", r.f64_or("noise_scale_px", d.noise_scale_px)?)?,
        })
    }

    /// Extinction coefficient in 1/m.
    pub fn beta(&self) -> f64 {
        KOSCHMIEDER_CONSTANT / self.visibility_m
    }
}

/// Blend every pixel toward scalar airlight `a` with transmission
/// `exp(-beta(x) * d(x))`.
pub(crate) fn scatter(image: &Image, depth: &[f32], a: f64, beta_at: impl Fn(u32, u32) -> f64) -> Image {
    let mut out = image.clone();
    let w = image.width();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
        let t = (-beta_at(x, y) * f64::from(depth[i])).exp();
        for c in px.iter_mut() {
            *c = (f64::from(*c) * t + a * (1.0 - t)).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Apply fog given dense metric depth. `noise_seed` drives the
/// heterogeneous extinction field and is ignored for homogeneous fog.
pub fn fog_apply(image: &Image, depth: &[f32], params: &FogParams, noise_seed: u64) -> Image {
    let beta = params.beta();
    let a = params.atmospheric_light;
    if params.heterogeneous {
        let amp = params.heterogeneity_amplitude;
        let scale = params.noise_scale_px;
        scatter(image, depth, a, |x, y| {
            beta * (1.0 + amp * value_noise(noise_seed, f64::from(x), f64::from(y), scale))
        })
    } else {
        scatter(image, depth, a, |_, _| beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_from_visibility() {
        assert!((FogParams::new(100.0).beta() - 0.03912).abs() < 1e-15);
    }

    #[test]
    fn contrast_threshold_at_visibility() {
        let img = Image::new(4, 3);
        let p = FogParams {
            atmospheric_light: 1.0,
            ..FogParams::new(50.0)
        };
        let out = fog_apply(&img, &[50.0; 12], &p, 0);
        let expected = 1.0 - (-3.912f64).exp();
        assert!(out.data().iter().all(|v| (f64::from(*v) - expected).abs() < 1e-6));
    }

    #[test]
    fn zero_depth_is_identity() {
        let img = Image::from_fn(5, 5, |x, y| [x as f32 / 5.0, y as f32 / 5.0, 0.3]);
        let out = fog_apply(&img, &[0.0; 25], &FogParams::new(10.0), 0);
        assert_eq!(out.to_bytes(), img.to_bytes());
    }
}
