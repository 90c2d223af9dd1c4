//! Rain parameterized by rainfall rate in mm/h.
//!
//! Two stages: haze-like attenuation from distant droplets with
//! `beta = a * R^b`, then near-vertical streaks composited additively and
//! occluded by scene geometry nearer than the streak.

use rand::Rng;

use crate::config::Parameters;
use crate::dataset::CameraIntrinsics;
use crate::error::Result;
use crate::image::Image;
use crate::raster::for_each_segment_pixel;
use crate::seed::rng_from_seed;

use super::fog::scatter;
use super::{non_negative, positive, ParamReader};

#[derive(Clone, Debug, PartialEq)]
pub struct RainParams {
    pub intensity: f64,
    pub attenuation_a: f64,
    pub attenuation_b: f64,
    /// Streaks per (mm/h * megapixel).
    pub streak_density: f64,
    pub streak_length_px: f64,
    pub streak_width_px: f64,
    pub streak_brightness: f64,
    pub angle_jitter_deg: f64,
}

/// Depth range in meters from which each streak's distance is drawn.
pub const STREAK_DEPTH_RANGE_M: (f64, f64) = (1.0, 10.0);

impl RainParams {
    pub fn new(intensity: f64) -> Self {
        Self {
            intensity,
            attenuation_a: 1e-4,
            attenuation_b: 0.7,
            streak_density: 3.0,
            streak_length_px: 40.0,
            streak_width_px: 1.5,
            streak_brightness: 0.3,
            angle_jitter_deg: 10.0,
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "intensity",
        "attenuation_a",
        "attenuation_b",
        "streak_density",
        "streak_length_px",
        "streak_width_px",
        "streak_brightness",
        "angle_jitter_deg",
        "depth_fallback_m",
    ];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "rain", Self::KEYS)?;
        let d = Self::new(0.0);
        Ok(Self {
            intensity: positive("intensity", r.f64_req("intensity")?)?,
            attenuation_a: non_negative("attenuation_a", r.f64_or("attenuation_a", d.attenuation_a)?)?,
            attenuation_b: non_negative("attenuation_b", r.f64_or("attenuation_b", d.attenuation_b)?)?,
            streak_density: non_negative("streak_density", r.f64_or("streak_density", d.streak_density)?)?,
            streak_length_px: positive("streak_length_px", r.f64_or("streak_length_px", d.streak_length_px)?)?,
            streak_width_px: positive("streak_width_px", r.f64_or("streak_width_px", d.streak_width_px)?)?,
            streak_brightness: non_negative("streak_brightness", r.f64_or("streak_brightness", d.streak_brightness)?)?,
            angle_jitter_deg: non_negative("angle_jitter_deg", r.f64_or("angle_jitter_deg", d.angle_jitter_deg)?)?,
        })
    }

    pub fn beta(&self) -> f64 {
        self.attenuation_a * self.intensity.powf(self.attenuation_b)
    }
}

pub fn rain_streak_count(intensity: f64, density: f64, megapixels: f64) -> usize {
    (density * intensity * megapixels).round().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct Streak {
    pub top: (f64, f64),
    pub bottom: (f64, f64),
    pub depth_m: f64,
    pub width_px: f64,
    pub brightness: f64,
}

/// Streak layout for one frame; fully determined by `seed`.
pub fn rain_streaks(params: &RainParams, intrinsics: &CameraIntrinsics, seed: u64) -> Vec<Streak> {
    let n = rain_streak_count(params.intensity, params.streak_density, intrinsics.megapixels());
    let mut rng = rng_from_seed(seed);
    let (w, h) = (f64::from(intrinsics.width), f64::from(intrinsics.height));
    let (z_near, z_far) = STREAK_DEPTH_RANGE_M;
    (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * w;
            let y = rng.random::<f64>() * h;
            let z = z_near + rng.random::<f64>() * (z_far - z_near);
            let jitter = (rng.random::<f64>() * 2.0 - 1.0) * params.angle_jitter_deg;
            let angle = (90.0 + jitter).to_radians();
            let length = params.streak_length_px * z_near / z;
            Streak {
                top: (x, y),
                bottom: (x + length * angle.cos(), y + length * angle.sin()),
                depth_m: z,
                width_px: (params.streak_width_px / z.sqrt()).max(0.5),
                brightness: params.streak_brightness * (0.6 + 0.4 * z_near / z),
            }
        })
        .collect()
}

/// Mean luma of the brightest 1% of pixels.
pub fn estimate_atmospheric_light(image: &Image) -> f64 {
    let mut l = image.luma();
    if l.is_empty() {
        return 0.0;
    }
    let k = (l.len() / 100).max(1);
    let split = l.len() - k;
    l.select_nth_unstable_by(split, f32::total_cmp);
    l[split..].iter().map(|&v| f64::from(v)).sum::<f64>() / k as f64
}

pub fn rain_apply(
    image: &Image,
    depth: &[f32],
    params: &RainParams,
    seed: u64,
    intrinsics: &CameraIntrinsics,
) -> Image {
    let beta = params.beta();
    let a = estimate_atmospheric_light(image);
    let mut out = scatter(image, depth, a, |_, _| beta);

    let (w, h) = image.dimensions();
    let mut glow = vec![0.0f32; w as usize * h as usize];
    for s in rain_streaks(params, intrinsics, seed) {
        for_each_segment_pixel(w, h, s.top, s.bottom, s.width_px, |x, y, coverage| {
            let i = y as usize * w as usize + x as usize;
            if f64::from(depth[i]) >= s.depth_m {
                glow[i] += s.brightness as f32 * coverage;
            }
        });
    }
    for (px, g) in out.data_mut().chunks_exact_mut(3).zip(&glow) {
        if *g > 0.0 {
            for c in px.iter_mut() {
                *c = (*c + g).min(1.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_frame_streak_count() {
        let cal = CameraIntrinsics::default_for(1000, 470);
        assert_eq!(rain_streak_count(200.0, 3.0, cal.megapixels()), 282);
        assert_eq!(rain_streaks(&RainParams::new(200.0), &cal, 1).len(), 282);
    }

    #[test]
    fn brightest_percentile() {
        let mut img = Image::filled(10, 10, [0.2; 3]);
        img.set(3, 3, [1.0; 3]);
        assert!((estimate_atmospheric_light(&img) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn streaks_are_occluded_by_near_geometry() {
        let cal = CameraIntrinsics::default_for(64, 48);
        let p = RainParams {
            attenuation_a: 0.0,
            ..RainParams::new(2000.0)
        };
        let img = Image::filled(64, 48, [0.3; 3]);
        let near = rain_apply(&img, &[0.5; 64 * 48], &p, 3, &cal);
        assert_eq!(near.to_bytes(), img.to_bytes());
        let far = rain_apply(&img, &[50.0; 64 * 48], &p, 3, &cal);
        assert!(far.mean() > img.mean());
    }
}
