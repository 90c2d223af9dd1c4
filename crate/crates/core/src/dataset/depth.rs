//! Metric depth maps and the provider chain.

use std::path::{Path, PathBuf};

use image::ImageReader;

use super::{list_files, SequenceManifest, Stream};
use crate::config::{DatasetKind, DepthProviderConfig};
use crate::error::{Error, Result};

/// TUM RGB-D depth PNGs store millimetres times five.
pub const TUM_DEPTH_SCALE: f64 = 5000.0;

/// Per-pixel metric depth in meters with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Build from raw values; non-finite and non-positive entries are
    /// marked invalid.
    pub fn from_values(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::Dataset(format!(
                "depth buffer has {} values for {width}x{height}",
                values.len()
            )));
        }
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn uniform(width: u32, height: u32, depth_m: f32) -> Self {
        Self::from_values(width, height, vec![depth_m; width as usize * height as usize])
            .expect("length matches")
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[y as usize * self.width as usize + x as usize]
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Median of the valid depths.
    pub fn median_valid(&self) -> Option<f32> {
        let mut v: Vec<f32> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter_map(|(d, ok)| ok.then_some(*d))
            .collect();
        if v.is_empty() {
            return None;
        }
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
        Some(*m)
    }

    /// Dense depth with invalid pixels replaced by the median valid depth.
    /// `None` when no pixel is valid.
    pub fn filled(&self) -> Option<Vec<f32>> {
        let median = self.median_valid()?;
        Some(
            self.values
                .iter()
                .zip(&self.valid)
                .map(|(d, ok)| if *ok { *d } else { median })
                .collect(),
        )
    }

    /// Decode a 16-bit PNG storing `meters * scale`; zeros are invalid.
    pub fn from_png16(path: &Path, scale: f64) -> Result<Self> {
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma16();
        let values = img
            .as_raw()
            .iter()
            .map(|&v| if v == 0 { 0.0 } else { (f64::from(v) / scale) as f32 })
            .collect();
        Self::from_values(img.width(), img.height(), values)
    }

    pub fn to_png16(&self, path: &Path, scale: f64) -> Result<()> {
        let raw: Vec<u16> = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(d, ok)| {
                if *ok {
                    (f64::from(*d) * scale).round().clamp(1.0, 65535.0) as u16
                } else {
                    0
                }
            })
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width, self.height, raw)
            .expect("length matches");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Raw raster: `u32` LE width, `u32` LE height, then `f32` LE values in
    /// row-major order.
    pub fn from_raw_f32(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |what: &str| Error::Dataset(format!("corrupt depth raster {}: {what}", path.display()));
        if bytes.len() < 8 {
            return Err(corrupt("missing header"));
        }
        let w = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
        let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let n = w as usize * h as usize;
        if bytes.len() != 8 + n * 4 {
            return Err(corrupt("payload length does not match header"));
        }
        let values = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_values(w, h, values)
    }

    pub fn to_raw_f32(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.values.len() * 4);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Native depth shipped with the dataset (TUM only), or `None`.
pub fn load_depth(manifest: &SequenceManifest, index: usize, stream: Stream) -> Result<Option<DepthMap>> {
    manifest.stream_slot(stream)?;
    let frame = manifest.frames.get(index).ok_or_else(|| {
        Error::Dataset(format!("frame index {index} out of range (sequence has {})", manifest.len()))
    })?;
    match (manifest.dataset_type, &frame.depth) {
        (DatasetKind::Tum, Some(rel)) => {
            DepthMap::from_png16(&manifest.sequence_dir().join(rel), TUM_DEPTH_SCALE).map(Some)
        }
        _ => Ok(None),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DepthProvider {
    Native,
    FileDir { files: Vec<PathBuf>, scale: f64 },
    Constant { depth_m: f32 },
}

/// Resolve a configured provider against a sequence. Relative `file_dir`
/// paths are taken relative to the sequence directory.
pub fn depth_provider(config: &DepthProviderConfig, manifest: &SequenceManifest) -> Result<DepthProvider> {
    match config {
        DepthProviderConfig::Native => Ok(DepthProvider::Native),
        DepthProviderConfig::Constant { depth_m } => Ok(DepthProvider::Constant {
            depth_m: *depth_m as f32,
        }),
        DepthProviderConfig::FileDir { path, scale } => {
            let dir = if path.is_absolute() {
                path.clone()
            } else {
                manifest.sequence_dir().join(path)
            };
            if !dir.is_dir() {
                return Err(Error::Dataset(format!("depth directory {} does not exist", dir.display())));
            }
            let files: Vec<PathBuf> = list_files(&dir)?
                .into_iter()
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| matches!(e, "png" | "raw" | "bin" | "f32"))
                })
                .collect();
            if files.len() != manifest.source_frame_count {
                return Err(Error::Dataset(format!(
                    "depth directory {} has {} files but the sequence has {} frames",
                    dir.display(),
                    files.len(),
                    manifest.source_frame_count
                )));
            }
            if !(*scale > 0.0) {
                return Err(Error::Config("file_dir depth scale must be > 0".into()));
            }
            Ok(DepthProvider::FileDir { files, scale: *scale })
        }
    }
}

impl DepthProvider {
    fn load(&self, manifest: &SequenceManifest, index: usize) -> Result<Option<DepthMap>> {
        let cal = &manifest.calibration[0];
        let map = match self {
            DepthProvider::Native => return load_depth(manifest, index, Stream::Left),
            DepthProvider::Constant { depth_m } => DepthMap::uniform(cal.width, cal.height, *depth_m),
            DepthProvider::FileDir { files, scale } => {
                let path = &files[manifest.frames[index].source_position];
                let is_png = path.extension().and_then(|e| e.to_str()) == Some("png");
                if is_png {
                    DepthMap::from_png16(path, *scale)?
                } else {
                    DepthMap::from_raw_f32(path)?
                }
            }
        };
        Ok(Some(map))
    }
}

/// Providers consulted in order; the first that yields a map wins.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DepthChain {
    providers: Vec<DepthProvider>,
}

impl DepthChain {
    pub fn new(providers: Vec<DepthProvider>) -> Self {
        Self { providers }
    }

    pub fn from_config(configs: &[DepthProviderConfig], manifest: &SequenceManifest) -> Result<Self> {
        configs
            .iter()
            .map(|c| depth_provider(c, manifest))
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn is_empty(&self) -> bool {
        self.providers.is_empty()
    }

    /// Depth for a frame. The right stream reuses the reference stream's
    /// depth.
    pub fn load(&self, manifest: &SequenceManifest, index: usize, stream: Stream) -> Result<Option<DepthMap>> {
        manifest.stream_slot(stream)?;
        if index >= manifest.len() {
            return Err(Error::Dataset(format!(
                "frame index {index} out of range (sequence has {})",
                manifest.len()
            )));
        }
        for p in &self.providers {
            if let Some(map) = p.load(manifest, index)? {
                let cal = &manifest.calibration[0];
                if map.dimensions() != (cal.width, cal.height) {
                    return Err(Error::DimensionMismatch {
                        expected: (cal.width, cal.height),
                        actual: map.dimensions(),
                    });
                }
                return Ok(Some(map));
            }
        }
        Ok(None)
    }
}
