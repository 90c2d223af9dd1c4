//! Depth-dependent motion blur under pure forward translation.
//!
//! During an exposure of `e` ms at `s` km/h the camera advances
//! `dZ = (s / 3.6) * (e / 1000)` meters. A pixel at depth `d` moves radially
//! away from the principal point to where it would project at depth
//! `max(d - dZ, 0.1)`; the output averages bilinear samples along that path.

use crate::config::Parameters;
use crate::dataset::CameraIntrinsics;
use crate::error::Result;
use crate::image::Image;

use super::{non_negative, ParamReader};

/// Closest depth a point can reach during the exposure, in meters.
pub const MIN_DEPTH_M: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionBlurParams {
    pub speed_kmh: f64,
    pub exposure_ms: f64,
    pub max_taps: usize,
}

impl MotionBlurParams {
    pub fn new(speed_kmh: f64, exposure_ms: f64) -> Self {
        Self {
            speed_kmh,
            exposure_ms,
            max_taps: 32,
        }
    }

    pub const KEYS: &'static [&'static str] = &["speed_kmh", "exposure_ms", "max_taps", "depth_fallback_m"];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "motion_blur", Self::KEYS)?;
        let max_taps = r.usize_or("max_taps", 32)?;
        if max_taps == 0 {
            return Err(crate::Error::param("max_taps", "must be >= 1"));
        }
        Ok(Self {
            speed_kmh: non_negative("speed_kmh", r.f64_req("speed_kmh")?)?,
            exposure_ms: non_negative("exposure_ms", r.f64_req("exposure_ms")?)?,
            max_taps,
        })
    }

    /// Forward travel during the exposure, in meters.
    pub fn delta_z(&self) -> f64 {
        (self.speed_kmh / 3.6) * (self.exposure_ms / 1000.0)
    }
}

/// End of the blur path for pixel `(u, v)` at depth `d`.
pub fn blur_endpoint(u: f64, v: f64, d: f64, delta_z: f64, cx: f64, cy: f64) -> (f64, f64) {
    let d_end = (d - delta_z).max(MIN_DEPTH_M);
    let k = d / d_end;
    (cx + (u - cx) * k, cy + (v - cy) * k)
}

pub fn motion_blur_apply(
    image: &Image,
    depth: &[f32],
    params: &MotionBlurParams,
    intrinsics: &CameraIntrinsics,
) -> Image {
    let dz = params.delta_z();
    if dz == 0.0 {
        return image.clone();
    }
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let i = y as usize * w as usize + x as usize;
            let (u, v) = (f64::from(x), f64::from(y));
            let (eu, ev) = blur_endpoint(u, v, f64::from(depth[i]), dz, intrinsics.cx, intrinsics.cy);
            let len = ((eu - u).powi(2) + (ev - v).powi(2)).sqrt();
            let n = (len.ceil() as usize).clamp(1, params.max_taps);
            if n == 1 {
                continue;
            }
            let mut acc = [0.0f64; 3];
            for k in 0..n {
                let t = k as f64 / (n - 1) as f64;
                let s = image.sample_bilinear(u + (eu - u) * t, v + (ev - v) * t);
                for c in 0..3 {
                    acc[c] += f64::from(s[c]);
                }
            }
            for c in 0..3 {
                data[i * 3 + c] = (acc[c] / n as f64).clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}
