//! Effect implementations. Each effect is a pure transform parameterized in
//! physical units; state that must be constant across a sequence (soiling
//! overlays, crack patterns, drop plans) is generated once up front.

pub mod crack;
pub mod fog;
pub mod frame_drop;
pub mod motion_blur;
pub mod night;
pub mod rain;
pub mod soiling;
pub mod transport;

use std::borrow::Cow;

use crate::config::{ParamValue, Parameters};
use crate::dataset::DepthMap;
use crate::error::{Error, Result};

/// Typed access to a module's parameter map with strict key checking.
pub(crate) struct ParamReader<'a> {
    params: &'a Parameters,
}

impl<'a> ParamReader<'a> {
    /// Fails on any key not in `allowed`.
    pub fn new(params: &'a Parameters, module: &str, allowed: &[&str]) -> Result<Self> {
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::param(
                k.clone(),
                format!("is not a {module} parameter (expected one of: {})", allowed.join(", ")),
            ));
        }
        Ok(Self { params })
    }

    pub fn get(&self, key: &str) -> Option<&'a ParamValue> {
        self.params.get(key)
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| Error::param(key, format!("must be a number, got `{v}`"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn f64_req(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| Error::param(key, "is required"))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.f64_opt(key)? {
            None => Ok(default),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            Some(v) => Err(Error::param(key, format!("must be a non-negative integer, got {v}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| Error::param(key, format!("must be true or false, got `{v}`"))),
        }
    }

    pub fn str_or(&self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::param(key, format!("must be a string, got `{v}`"))),
        }
    }

    pub fn rgb_or(&self, key: &str, default: [f32; 3]) -> Result<[f32; 3]> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::List(items)) if items.len() == 3 => {
                let mut out = [0.0; 3];
                for (o, item) in out.iter_mut().zip(items) {
                    let v = item
                        .as_f64()
                        .filter(|v| (0.0..=1.0).contains(v))
                        .ok_or_else(|| Error::param(key, "entries must be numbers in [0, 1]"))?;
                    *o = v as f32;
                }
                Ok(out)
            }
            Some(v) => Err(Error::param(key, format!("must be a list of 3 numbers, got `{v}`"))),
        }
    }

    pub fn range_or(&self, lo_key: &str, hi_key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        let lo = self.f64_or(lo_key, default.0)?;
        let hi = self.f64_or(hi_key, default.1)?;
        if lo > hi {
            return Err(Error::param(lo_key, format!("must be <= {hi_key}")));
        }
        Ok((lo, hi))
    }
}

pub(crate) fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::param(key, "must be > 0"))
    }
}

pub(crate) fn non_negative(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::param(key, "must be >= 0"))
    }
}

pub(crate) fn unit_interval(key: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::param(key, "must be in [0, 1]"))
    }
}

/// Dense per-pixel depth for a depth-aware effect: the frame's depth map with
/// invalid pixels filled by the median valid depth, or a uniform fallback.
pub fn resolve_depth<'a>(
    depth: Option<&'a DepthMap>,
    fallback_m: Option<f64>,
    width: u32,
    height: u32,
    module: &str,
) -> Result<Cow<'a, [f32]>> {
    if let Some(d) = depth {
        if d.dimensions() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: d.dimensions(),
            });
        }
        if d.valid_count() == d.values().len() {
            return Ok(Cow::Borrowed(d.values()));
        }
        if let Some(filled) = d.filled() {
            return Ok(Cow::Owned(filled));
        }
    }
    match fallback_m {
        Some(f) => Ok(Cow::Owned(vec![f as f32; width as usize * height as usize])),
        None => Err(Error::MissingDepth {
            module: module.to_string(),
        }),
    }
}
