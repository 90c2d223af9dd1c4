//! Dataset adapters.
//!
//! Each adapter maps a dataset's on-disk layout onto a [`SequenceManifest`]:
//! the ordered frame list, image paths per camera stream, optional native
//! depth and the camera calibration. Everything downstream (perturbations,
//! SLAM wrappers, feature tracking) works on manifests only.

mod depth;
mod euroc;
mod kitti;
pub mod synthetic;
mod tum;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use self::depth::{depth_provider, load_depth, DepthChain, DepthMap, DepthProvider};
pub use self::synthetic::{generate_synthetic_sequence, DepthModel, Motion, SyntheticSpec, Texture};

use crate::config::{DatasetKind, DatasetSelector};
use crate::error::{Error, Result};
use crate::image::{ColorType, Image};

/// Camera stream. `Left` doubles as the monocular stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Left,
    Right,
}

impl Stream {
    pub fn seed_byte(self) -> u8 {
        match self {
            Stream::Left => 0,
            Stream::Right => 1,
        }
    }

    pub fn index(self) -> usize {
        self.seed_byte() as usize
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Left => "left",
            Stream::Right => "right",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: Option<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Centred principal point with a moderate field of view; used when a
    /// sequence ships without calibration.
    pub fn default_for(width: u32, height: u32) -> Self {
        let f = 0.58 * f64::from(width);
        Self {
            fx: f,
            fy: f,
            cx: f64::from(width) / 2.0,
            cy: f64::from(height) / 2.0,
            baseline: None,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..f64::from(self.width)).contains(&self.cx)
            && (0.0..f64::from(self.height)).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn megapixels(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height) / 1e6
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    /// Image path per declared stream, relative to the sequence directory.
    pub images: Vec<PathBuf>,
    /// Native depth path relative to the sequence directory.
    pub depth: Option<PathBuf>,
    /// Position of this frame in the untruncated source ordering.
    pub source_position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataKind {
    /// `#timestamp [ns],filename` rows (EuRoC camera `data.csv`).
    EurocCsv,
    /// One timestamp per line, line i belongs to the i-th frame (KITTI `times.txt`).
    KittiTimes,
    /// `timestamp path` rows (TUM `rgb.txt`).
    TumList,
}

/// A sidecar file whose rows refer to individual frames and must be rewritten
/// whenever frames are removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataFile {
    pub path: PathBuf,
    pub kind: MetadataKind,
    pub stream: Stream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub dataset_type: DatasetKind,
    pub sequence_id: String,
    pub dataset_root: PathBuf,
    /// Sequence directory relative to the dataset root.
    pub sequence_rel: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub streams: Vec<Stream>,
    /// Calibration per stream, same order as `streams`.
    pub calibration: Vec<CameraIntrinsics>,
    pub color: Vec<ColorType>,
    pub frame_rate_hz: f64,
    pub metadata_files: Vec<MetadataFile>,
    /// Other files copied verbatim into perturbed sequences.
    pub sidecar_files: Vec<PathBuf>,
    pub source_frame_count: usize,
    pub ground_truth: Option<PathBuf>,
}

impl SequenceManifest {
    pub fn sequence_dir(&self) -> PathBuf {
        self.dataset_root.join(&self.sequence_rel)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn stream_slot(&self, stream: Stream) -> Result<usize> {
        self.streams
            .iter()
            .position(|&s| s == stream)
            .ok_or_else(|| Error::Dataset(format!("stream {stream} not declared by this sequence")))
    }

    pub fn intrinsics(&self, stream: Stream) -> Result<&CameraIntrinsics> {
        Ok(&self.calibration[self.stream_slot(stream)?])
    }

    pub fn image_path(&self, index: usize, stream: Stream) -> Result<PathBuf> {
        let frame = self.frames.get(index).ok_or_else(|| {
            Error::Dataset(format!("frame index {index} out of range (sequence has {})", self.len()))
        })?;
        Ok(self.sequence_dir().join(&frame.images[self.stream_slot(stream)?]))
    }

    /// The same frames under a different dataset root, as written by
    /// [`write_filtered_metadata`]: listing positions are renumbered to
    /// match the copied metadata.
    pub fn rebased(&self, dataset_root: &Path) -> Self {
        let mut out = Self {
            dataset_root: dataset_root.to_path_buf(),
            ..self.clone()
        };
        for (i, f) in out.frames.iter_mut().enumerate() {
            f.source_position = i;
        }
        out.source_frame_count = out.frames.len();
        out
    }

    pub fn ground_truth_path(&self) -> Option<PathBuf> {
        self.ground_truth.clone()
    }

    fn check_invariants(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Dataset(format!(
                "sequence `{}` under {} is empty",
                self.sequence_id,
                self.sequence_dir().display()
            )));
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Dataset(format!(
                    "frame ordering not strictly increasing at frame {}",
                    i + 1
                )));
            }
        }
        for f in &self.frames {
            if f.images.len() != self.streams.len() || !f.timestamp.is_finite() {
                return Err(Error::Dataset(format!("frame {} is incomplete", f.index)));
            }
        }
        for c in &self.calibration {
            c.validate()?;
        }
        Ok(())
    }

    fn truncate(&mut self, max_frames: Option<usize>) {
        if let Some(n) = max_frames {
            self.frames.truncate(n);
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OpenOptions {
    pub max_frames: Option<usize>,
    pub load_stereo: bool,
}

/// Open a sequence through the adapter for `kind`.
pub fn open_sequence(
    kind: DatasetKind,
    root: &Path,
    sequence_id: &str,
    options: OpenOptions,
) -> Result<SequenceManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} does not exist", root.display())));
    }
    let mut manifest = match kind {
        DatasetKind::Kitti => kitti::open(root, sequence_id, options.load_stereo)?,
        DatasetKind::Tum => tum::open(root, sequence_id, options.load_stereo)?,
        DatasetKind::Euroc => euroc::open(root, sequence_id, options.load_stereo)?,
    };
    manifest.truncate(options.max_frames);
    let seq_dir = manifest.sequence_dir();
    if manifest.ground_truth.is_none() {
        let gt = seq_dir.join("groundtruth.txt");
        if gt.is_file() {
            manifest.ground_truth = Some(gt);
        }
    }
    manifest.check_invariants()?;
    Ok(manifest)
}

pub fn open_selected(selector: &DatasetSelector) -> Result<SequenceManifest> {
    let mut manifest = open_sequence(
        selector.kind,
        &selector.root,
        &selector.sequence,
        OpenOptions {
            max_frames: selector.max_frames,
            load_stereo: selector.load_stereo,
        },
    )?;
    if let Some(gt) = &selector.ground_truth {
        manifest.ground_truth = Some(gt.clone());
    }
    Ok(manifest)
}

/// Load a frame as a `[0, 1]` RGB image; grayscale sources are replicated to
/// three channels.
pub fn load_frame(manifest: &SequenceManifest, index: usize, stream: Stream) -> Result<Image> {
    let path = manifest.image_path(index, stream)?;
    let (img, _) = Image::load(&path)?;
    let cal = manifest.intrinsics(stream)?;
    if img.dimensions() != (cal.width, cal.height) {
        return Err(Error::DimensionMismatch {
            expected: (cal.width, cal.height),
            actual: img.dimensions(),
        });
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Shared adapter helpers
// ---------------------------------------------------------------------------

/// Regular files in `dir`, sorted by name.
pub(crate) fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(list_files(dir)?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect())
}

pub(crate) fn probe_image(path: &Path) -> Result<(u32, u32, ColorType)> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoder_color = {
        let img = reader.decode().map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        (img.width(), img.height(), img.color().has_color())
    };
    let color = if decoder_color.2 { ColorType::Rgb } else { ColorType::Gray };
    Ok((decoder_color.0, decoder_color.1, color))
}

pub(crate) fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Dataset(format!("missing {what} directory {}", path.display())))
    }
}

/// Rewrite frame-indexed metadata so that only `kept` frames remain.
///
/// `kept` holds the kept frames' image paths (relative to the sequence
/// dir) for the metadata file's stream, and `kept_positions` their
/// `source_position`s.
pub(crate) fn rewrite_metadata(
    text: &str,
    meta: &MetadataFile,
    kept: &HashSet<PathBuf>,
    kept_positions: &HashSet<usize>,
    image_dir: &Path,
) -> String {
    let mut out = String::with_capacity(text.len());
    match meta.kind {
        MetadataKind::KittiTimes => {
            for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                if kept_positions.contains(&i) {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        MetadataKind::EurocCsv => {
            for line in text.lines() {
                let t = line.trim();
                if t.is_empty() {
                    continue;
                }
                let keep = t.starts_with('#')
                    || t.split(',')
                        .nth(1)
                        .map(|f| kept.contains(&image_dir.join(f.trim())))
                        .unwrap_or(false);
                if keep {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        MetadataKind::TumList => {
            for line in text.lines() {
                let t = line.trim();
                if t.is_empty() {
                    continue;
                }
                let keep = t.starts_with('#')
                    || t.split_whitespace()
                        .nth(1)
                        .map(|f| kept.contains(Path::new(f)))
                        .unwrap_or(false);
                if keep {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// Write metadata files for the subset `frames` of `manifest` into the
/// sequence directory `dest_seq_dir`.
pub fn write_filtered_metadata(
    manifest: &SequenceManifest,
    frames: &[FrameRecord],
    dest_seq_dir: &Path,
) -> Result<()> {
    let src_dir = manifest.sequence_dir();
    let positions: HashSet<usize> = frames.iter().map(|f| f.source_position).collect();
    for meta in &manifest.metadata_files {
        let slot = manifest.stream_slot(meta.stream)?;
        let kept: HashSet<PathBuf> = frames.iter().map(|f| f.images[slot].clone()).collect();
        let src = src_dir.join(&meta.path);
        let text = std::fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
        let image_dir = match meta.kind {
            MetadataKind::EurocCsv => meta
                .path
                .parent()
                .map(|p| p.join("data"))
                .unwrap_or_else(|| PathBuf::from("data")),
            _ => PathBuf::new(),
        };
        let rewritten = rewrite_metadata(&text, meta, &kept, &positions, &image_dir);
        let dst = dest_seq_dir.join(&meta.path);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&dst, rewritten).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_times_filtered_by_position() {
        let meta = MetadataFile {
            path: "times.txt".into(),
            kind: MetadataKind::KittiTimes,
            stream: Stream::Left,
        };
        let text = "0.0\n0.1\n0.2\n0.3\n";
        let positions: HashSet<usize> = [0, 2].into_iter().collect();
        let out = rewrite_metadata(text, &meta, &HashSet::new(), &positions, Path::new(""));
        assert_eq!(out, "0.0\n0.2\n");
    }

    #[test]
    fn euroc_rows_filtered_header_kept() {
        let meta = MetadataFile {
            path: "mav0/cam0/data.csv".into(),
            kind: MetadataKind::EurocCsv,
            stream: Stream::Left,
        };
        let text = "#timestamp [ns],filename\n100,100.png\n200,200.png\n300,300.png\n";
        let kept: HashSet<PathBuf> = [PathBuf::from("mav0/cam0/data/200.png")].into_iter().collect();
        let out = rewrite_metadata(text, &meta, &kept, &HashSet::new(), Path::new("mav0/cam0/data"));
        assert_eq!(out, "#timestamp [ns],filename\n200,200.png\n");
    }
}
