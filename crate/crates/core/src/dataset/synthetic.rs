//! Deterministic synthetic sequences in KITTI, TUM or EuRoC layout, for
//! tests and demos.
//!
//! ```no_run
//! use sal_core::dataset::{generate_synthetic_sequence, SyntheticSpec};
//!
//! let spec = SyntheticSpec { n_frames: 10, ..SyntheticSpec::default() };
//! let (manifest, gt) = generate_synthetic_sequence("/tmp/synth".as_ref(), "00", &spec)?;
//! assert_eq!(manifest.len(), 10);
//! assert_eq!(gt.len(), 10);
//! # Ok::<(), sal_core::Error>(())
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::depth::TUM_DEPTH_SCALE;
use super::{open_sequence, DepthMap, OpenOptions, SequenceManifest};
use crate::config::DatasetKind;
use crate::error::{Error, Result};
use crate::image::{ColorType, Image};
use crate::raster::value_noise;
use crate::trajectory::{Pose, Trajectory};

/// 16-bit depth PNGs written by the generator store `meters * 256`.
pub const SYNTHETIC_DEPTH_SCALE: f64 = 256.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    Checkerboard { cell_px: u32 },
    /// Band-limited value noise summed over three octaves.
    Noise { scale_px: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DepthModel {
    Constant { depth_m: f64 },
    /// Depth `near_m` on the bottom row rising linearly to `far_m` on the
    /// top row.
    GroundPlane { near_m: f64, far_m: f64 },
}

/// Constant forward velocity along +z with an optional lateral sinusoid.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub forward_m_per_frame: f64,
    pub lateral_amplitude_m: f64,
    pub lateral_period_frames: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_frames: usize,
    pub width: u32,
    pub height: u32,
    pub texture: Texture,
    pub depth_model: DepthModel,
    pub gt_motion: Motion,
    /// Horizontal texture shift per frame, so tracking sees motion.
    pub drift_px_per_frame: f64,
    pub stereo: bool,
    pub seed: u64,
    pub layout: DatasetKind,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_frames: 20,
            width: 160,
            height: 120,
            texture: Texture::Noise { scale_px: 12.0 },
            depth_model: DepthModel::Constant { depth_m: 10.0 },
            gt_motion: Motion {
                forward_m_per_frame: 0.5,
                lateral_amplitude_m: 0.0,
                lateral_period_frames: 20.0,
            },
            drift_px_per_frame: 1.0,
            stereo: false,
            seed: 7,
            layout: DatasetKind::Kitti,
        }
    }
}

impl SyntheticSpec {
    /// The small fixture the end-to-end checks and the book use: 20 frames
    /// over a ground plane 1 to 6 m away, with a lateral weave so the
    /// trajectory is not a straight line.
    pub fn desk_scale() -> Self {
        Self {
            depth_model: DepthModel::GroundPlane { near_m: 1.0, far_m: 6.0 },
            gt_motion: Motion {
                forward_m_per_frame: 0.5,
                lateral_amplitude_m: 0.5,
                lateral_period_frames: 20.0,
            },
            ..Self::default()
        }
    }
}

const FRAME_RATE_HZ: f64 = 10.0;
const STEREO_DISPARITY_PX: f64 = 4.0;

/// EuRoC-style nanosecond stamp for a sequence time, offset to a
/// realistic epoch.
fn euroc_ns(t: f64) -> u64 {
    1_403_636_579_763_555_584 + (t * 1e9).round() as u64
}

impl SyntheticSpec {
    fn texture_at(&self, x: f64, y: f64) -> [f32; 3] {
        let base = match self.texture {
            Texture::Checkerboard { cell_px } => {
                let c = f64::from(cell_px.max(1));
                let parity = ((x / c).floor() as i64 + (y / c).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    0.15
                } else {
                    0.85
                }
            }
            Texture::Noise { scale_px } => {
                let n = 0.5 * value_noise(self.seed, x, y, scale_px)
                    + 0.3 * value_noise(self.seed ^ 0x9e37, x, y, scale_px / 2.0)
                    + 0.2 * value_noise(self.seed ^ 0x7f4a, x, y, scale_px / 4.0);
                0.5 + 0.4 * n
            }
        } as f32;
        [base, (base * 0.92 + 0.04).min(1.0), (base * 0.85 + 0.06).min(1.0)]
    }

    fn depth_at(&self, y: u32) -> f64 {
        match self.depth_model {
            DepthModel::Constant { depth_m } => depth_m,
            DepthModel::GroundPlane { near_m, far_m } => {
                let h = f64::from(self.height.max(2) - 1);
                let from_bottom = f64::from(self.height - 1 - y) / h;
                near_m + (far_m - near_m) * from_bottom
            }
        }
    }

    fn frame(&self, i: usize, offset_px: f64) -> Image {
        let shift = self.drift_px_per_frame * i as f64 + offset_px;
        Image::from_fn(self.width, self.height, |x, y| {
            self.texture_at(f64::from(x) + shift, f64::from(y))
        })
    }

    pub fn ground_truth(&self) -> Trajectory {
        let m = &self.gt_motion;
        let poses = (0..self.n_frames)
            .map(|i| {
                let t = i as f64 / FRAME_RATE_HZ;
                let phase = 2.0 * std::f64::consts::PI * i as f64 / m.lateral_period_frames.max(1.0);
                let x = m.lateral_amplitude_m * phase.sin();
                Pose::from_position(t, x, 0.0, m.forward_m_per_frame * i as f64)
            })
            .collect();
        Trajectory::new(poses).expect("timestamps increase")
    }
}

/// Write a sequence in `spec.layout` and open it. Every layout gets a
/// TUM-format `groundtruth.txt` in the sequence directory.
///
/// - KITTI: `<root>/sequences/<id>/` with `image_2/` (plus `image_3/` for
///   stereo), `times.txt`, `calib.txt` and `depth/%06d.png` (meters * 256).
/// - TUM: `<root>/<id>/` with `rgb/`, `rgb.txt`, native `depth/` and
///   `depth.txt`.
/// - EuRoC: `<root>/<id>/mav0/cam0/` (plus `cam1/`) with `data/<ns>.png`
///   and `data.csv`; no depth.
pub fn generate_synthetic_sequence(
    root: &Path,
    sequence_id: &str,
    spec: &SyntheticSpec,
) -> Result<(SequenceManifest, Trajectory)> {
    if spec.n_frames < 2 {
        return Err(Error::param("n_frames", "must be >= 2"));
    }
    if spec.width < 8 || spec.height < 8 {
        return Err(Error::param("width/height", "must be >= 8"));
    }
    if spec.stereo && spec.layout == DatasetKind::Tum {
        return Err(Error::param("stereo", "is not available for the TUM layout"));
    }
    let seq = match spec.layout {
        DatasetKind::Kitti => root.join("sequences").join(sequence_id),
        DatasetKind::Tum | DatasetKind::Euroc => root.join(sequence_id),
    };
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let write = |path: PathBuf, text: String| std::fs::write(&path, text).map_err(|e| Error::io(&path, e));

    let depth_values: Vec<f32> = (0..spec.height)
        .flat_map(|y| std::iter::repeat_n(spec.depth_at(y) as f32, spec.width as usize))
        .collect();
    let depth = DepthMap::from_values(spec.width, spec.height, depth_values)?;
    let t = |i: usize| i as f64 / FRAME_RATE_HZ;

    match spec.layout {
        DatasetKind::Kitti => {
            mkdir(&seq.join("image_2"))?;
            mkdir(&seq.join("depth"))?;
            if spec.stereo {
                mkdir(&seq.join("image_3"))?;
            }
            let mut times = String::new();
            for i in 0..spec.n_frames {
                let name = format!("{i:06}.png");
                spec.frame(i, 0.0).save(&seq.join("image_2").join(&name), ColorType::Rgb)?;
                if spec.stereo {
                    spec.frame(i, STEREO_DISPARITY_PX)
                        .save(&seq.join("image_3").join(&name), ColorType::Rgb)?;
                }
                depth.to_png16(&seq.join("depth").join(&name), SYNTHETIC_DEPTH_SCALE)?;
                writeln!(times, "{:.6e}", t(i)).expect("string write");
            }
            write(seq.join("times.txt"), times)?;
            let f = 0.58 * f64::from(spec.width);
            let (cx, cy) = (f64::from(spec.width) / 2.0, f64::from(spec.height) / 2.0);
            let baseline = 0.54;
            let p = |tx: f64| format!("{f:.6e} 0 {cx:.6e} {tx:.6e} 0 {f:.6e} {cy:.6e} 0 0 0 1 0");
            write(seq.join("calib.txt"), format!("P2: {}\nP3: {}\n", p(0.0), p(-f * baseline)))?;
        }
        DatasetKind::Tum => {
            mkdir(&seq.join("rgb"))?;
            mkdir(&seq.join("depth"))?;
            let (mut rgb, mut dep) = (String::from("# color images\n"), String::from("# depth maps\n"));
            for i in 0..spec.n_frames {
                let name = format!("{:.6}.png", t(i));
                spec.frame(i, 0.0).save(&seq.join("rgb").join(&name), ColorType::Rgb)?;
                depth.to_png16(&seq.join("depth").join(&name), TUM_DEPTH_SCALE)?;
                writeln!(rgb, "{:.6} rgb/{name}", t(i)).expect("string write");
                writeln!(dep, "{:.6} depth/{name}", t(i)).expect("string write");
            }
            write(seq.join("rgb.txt"), rgb)?;
            write(seq.join("depth.txt"), dep)?;
        }
        DatasetKind::Euroc => {
            let cams: &[(&str, f64)] = if spec.stereo {
                &[("cam0", 0.0), ("cam1", STEREO_DISPARITY_PX)]
            } else {
                &[("cam0", 0.0)]
            };
            for &(cam, offset) in cams {
                let dir = seq.join("mav0").join(cam);
                mkdir(&dir.join("data"))?;
                let mut csv = String::from("#timestamp [ns],filename\n");
                for i in 0..spec.n_frames {
                    let ns = euroc_ns(t(i));
                    let name = format!("{ns}.png");
                    spec.frame(i, offset).save(&dir.join("data").join(&name), ColorType::Rgb)?;
                    writeln!(csv, "{ns},{name}").expect("string write");
                }
                write(dir.join("data.csv"), csv)?;
            }
        }
    }

    let mut gt = spec.ground_truth();
    if spec.layout == DatasetKind::Euroc {
        let poses = gt
            .poses()
            .iter()
            .enumerate()
            .map(|(i, p)| Pose::new(euroc_ns(t(i)) as f64 * 1e-9, p.translation, p.rotation))
            .collect();
        gt = Trajectory::new(poses)?;
    }
    gt.save_tum(&seq.join("groundtruth.txt"))?;

    let manifest = open_sequence(
        spec.layout,
        root,
        sequence_id,
        OpenOptions {
            max_frames: None,
            load_stereo: spec.stereo,
        },
    )?;
    Ok((manifest, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_plane_is_nearer_at_the_bottom() {
        let spec = SyntheticSpec {
            depth_model: DepthModel::GroundPlane { near_m: 2.0, far_m: 30.0 },
            ..SyntheticSpec::default()
        };
        assert_eq!(spec.depth_at(spec.height - 1), 2.0);
        assert_eq!(spec.depth_at(0), 30.0);
        assert!(spec.depth_at(100) < spec.depth_at(10));
    }

    #[test]
    fn forward_motion_trajectory() {
        let spec = SyntheticSpec {
            n_frames: 10,
            ..SyntheticSpec::default()
        };
        let z: Vec<f64> = spec.ground_truth().positions().map(|p| p.z).collect();
        assert_eq!(z, (0..10).map(|i| 0.5 * i as f64).collect::<Vec<_>>());
    }
}
