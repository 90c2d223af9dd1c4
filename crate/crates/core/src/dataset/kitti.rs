use std::path::{Path, PathBuf};

use super::{
    list_images, probe_image, require_dir, CameraIntrinsics, FrameRecord, MetadataFile,
    MetadataKind, SequenceManifest, Stream,
};
use crate::config::DatasetKind;
use crate::error::{Error, Result};

const FRAME_RATE_HZ: f64 = 10.0;

pub(super) fn open(root: &Path, sequence_id: &str, load_stereo: bool) -> Result<SequenceManifest> {
    let sequence_rel = PathBuf::from("sequences").join(sequence_id);
    let seq_dir = root.join(&sequence_rel);
    require_dir(&seq_dir, "KITTI sequence")?;
    let left_dir = seq_dir.join("image_2");
    require_dir(&left_dir, "KITTI image_2")?;
    let left = ordered_images(&left_dir)?;
    if left.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", left_dir.display())));
    }

    let mut streams = vec![Stream::Left];
    let mut right = Vec::new();
    if load_stereo {
        let right_dir = seq_dir.join("image_3");
        if !right_dir.is_dir() {
            return Err(Error::Dataset(format!(
                "stereo requested but {} is absent",
                right_dir.display()
            )));
        }
        right = ordered_images(&right_dir)?;
        if right.len() != left.len() {
            return Err(Error::Dataset(format!(
                "image_2 has {} frames but image_3 has {}",
                left.len(),
                right.len()
            )));
        }
        streams.push(Stream::Right);
    }

    let times_path = seq_dir.join("times.txt");
    let mut metadata_files = Vec::new();
    let times = if times_path.is_file() {
        metadata_files.push(MetadataFile {
            path: "times.txt".into(),
            kind: MetadataKind::KittiTimes,
            stream: Stream::Left,
        });
        let text = std::fs::read_to_string(&times_path).map_err(|e| Error::io(&times_path, e))?;
        let t = parse_times(&text, &times_path)?;
        if t.len() < left.len() {
            return Err(Error::Dataset(format!(
                "{} lists {} timestamps for {} frames",
                times_path.display(),
                t.len(),
                left.len()
            )));
        }
        Some(t)
    } else {
        None
    };

    let (width, height, color) = probe_image(&left[0].1)?;
    let calib_path = seq_dir.join("calib.txt");
    let mut sidecar_files = Vec::new();
    let (mut cal_left, mut cal_right) = if calib_path.is_file() {
        sidecar_files.push(PathBuf::from("calib.txt"));
        let text = std::fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
        parse_calib(&text, width, height)?
    } else {
        let c = CameraIntrinsics::default_for(width, height);
        (c.clone(), c)
    };
    if !load_stereo {
        cal_left.baseline = None;
    }
    cal_right.baseline = cal_left.baseline;

    let frames = left
        .iter()
        .enumerate()
        .map(|(i, (_, path))| {
            let mut images = vec![rel(&seq_dir, path)];
            if load_stereo {
                images.push(rel(&seq_dir, &right[i].1));
            }
            FrameRecord {
                index: i,
                timestamp: times.as_ref().map_or(i as f64 / FRAME_RATE_HZ, |t| t[i]),
                images,
                depth: None,
                source_position: i,
            }
        })
        .collect();

    let mut calibration = vec![cal_left];
    let mut colors = vec![color];
    if load_stereo {
        calibration.push(cal_right);
        colors.push(color);
    }
    Ok(SequenceManifest {
        dataset_type: DatasetKind::Kitti,
        sequence_id: sequence_id.to_string(),
        dataset_root: root.to_path_buf(),
        sequence_rel,
        source_frame_count: left.len(),
        frames,
        streams,
        calibration,
        color: colors,
        frame_rate_hz: FRAME_RATE_HZ,
        metadata_files,
        sidecar_files,
        ground_truth: None,
    })
}

fn rel(base: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(base).unwrap_or(path).to_path_buf()
}

/// Images ordered by numeric filename index.
fn ordered_images(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for p in list_images(dir)? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let idx: u64 = stem.parse().map_err(|_| {
            Error::Dataset(format!("KITTI image name `{}` is not a frame index", p.display()))
        })?;
        out.push((idx, p));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

fn parse_times(text: &str, path: &Path) -> Result<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| {
                Error::Dataset(format!("{}: line {}: invalid timestamp", path.display(), i + 1))
            })
        })
        .collect()
}

/// Extract P2/P3 projection matrices; baseline from the difference of their
/// `fx * tx` terms.
fn parse_calib(text: &str, width: u32, height: u32) -> Result<(CameraIntrinsics, CameraIntrinsics)> {
    let mut p2 = None;
    let mut p3 = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let vals: Vec<f64> = rest.split_whitespace().filter_map(|v| v.parse().ok()).collect();
        if vals.len() != 12 {
            continue;
        }
        match key.trim() {
            "P2" => p2 = Some(vals),
            "P3" => p3 = Some(vals),
            _ => {}
        }
    }
    let make = |p: &[f64]| CameraIntrinsics {
        fx: p[0],
        fy: p[5],
        cx: p[2],
        cy: p[6],
        baseline: None,
        width,
        height,
    };
    match (p2, p3) {
        (Some(a), b) => {
            let mut left = make(&a);
            let right = b.as_deref().map(make).unwrap_or_else(|| left.clone());
            if let Some(b) = &b {
                left.baseline = Some((a[3] - b[3]) / a[0]);
            }
            Ok((left, right))
        }
        (None, _) => {
            let c = CameraIntrinsics::default_for(width, height);
            Ok((c.clone(), c))
        }
    }
}
