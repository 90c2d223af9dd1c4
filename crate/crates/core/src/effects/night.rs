//! Photometric night: underexposure, gamma, a blue white-balance shift and
//! sensor noise.

use rand_distr::{Distribution, Normal};

use crate::config::Parameters;
use crate::error::Result;
use crate::image::Image;
use crate::seed::rng_from_seed;

use super::{non_negative, positive, ParamReader};

#[derive(Clone, Debug, PartialEq)]
pub struct NightParams {
    pub exposure_scale: f64,
    pub blue_shift: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
}

impl Default for NightParams {
    fn default() -> Self {
        Self {
            exposure_scale: 0.25,
            blue_shift: 1.15,
            gamma: 1.4,
            noise_sigma: 0.02,
        }
    }
}

impl NightParams {
    pub const KEYS: &'static [&'static str] = &["exposure_scale", "blue_shift", "gamma", "noise_sigma"];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "night", Self::KEYS)?;
        let d = Self::default();
        Ok(Self {
            exposure_scale: positive("exposure_scale", r.f64_or("exposure_scale", d.exposure_scale)?)?,
            blue_shift: positive("blue_shift", r.f64_or("blue_shift", d.blue_shift)?)?,
            gamma: positive("gamma", r.f64_or("gamma", d.gamma)?)?,
            noise_sigma: non_negative("noise_sigma", r.f64_or("noise_sigma", d.noise_sigma)?)?,
        })
    }
}

pub fn night_apply(image: &Image, params: &NightParams, seed: u64) -> Image {
    let mut out = image.clone();
    let gain = [1.0, 1.0, params.blue_shift];
    let noise = (params.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, params.noise_sigma).expect("sigma is finite and positive"));
    let mut rng = rng_from_seed(seed);
    for px in out.data_mut().chunks_exact_mut(3) {
        for (c, g) in px.iter_mut().zip(gain) {
            let dark = (f64::from(*c) * params.exposure_scale).powf(params.gamma) * g;
            let mut v = dark.clamp(0.0, 1.0);
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            *c = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}
