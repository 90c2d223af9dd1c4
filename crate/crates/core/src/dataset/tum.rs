use std::path::{Path, PathBuf};

use super::{
    list_images, probe_image, require_dir, CameraIntrinsics, FrameRecord, MetadataFile,
    MetadataKind, SequenceManifest, Stream,
};
use crate::config::DatasetKind;
use crate::error::{Error, Result};
use crate::trajectory::associate_timestamps;

const FRAME_RATE_HZ: f64 = 30.0;
const DEPTH_ASSOCIATION_S: f64 = 0.02;

pub(super) fn open(root: &Path, sequence_id: &str, load_stereo: bool) -> Result<SequenceManifest> {
    if load_stereo {
        return Err(Error::Dataset(
            "stereo requested but TUM RGB-D sequences have a single camera".into(),
        ));
    }
    let sequence_rel = if root.join(sequence_id).is_dir() {
        PathBuf::from(sequence_id)
    } else {
        PathBuf::new()
    };
    let seq_dir = root.join(&sequence_rel);
    require_dir(&seq_dir.join("rgb"), "TUM rgb")?;

    let mut metadata_files = Vec::new();
    let mut sidecar_files = Vec::new();
    let rgb = if seq_dir.join("rgb.txt").is_file() {
        metadata_files.push(MetadataFile {
            path: "rgb.txt".into(),
            kind: MetadataKind::TumList,
            stream: Stream::Left,
        });
        read_list(&seq_dir.join("rgb.txt"))?
    } else {
        from_filenames(&seq_dir, "rgb")?
    };
    if rgb.is_empty() {
        return Err(Error::Dataset(format!("no rgb frames in {}", seq_dir.display())));
    }

    let depth = if seq_dir.join("depth.txt").is_file() {
        sidecar_files.push(PathBuf::from("depth.txt"));
        read_list(&seq_dir.join("depth.txt"))?
    } else if seq_dir.join("depth").is_dir() {
        from_filenames(&seq_dir, "depth")?
    } else {
        Vec::new()
    };
    for extra in ["accelerometer.txt", "groundtruth.txt"] {
        if seq_dir.join(extra).is_file() {
            sidecar_files.push(PathBuf::from(extra));
        }
    }

    let rgb_t: Vec<f64> = rgb.iter().map(|(t, _)| *t).collect();
    let depth_t: Vec<f64> = depth.iter().map(|(t, _)| *t).collect();
    let mut depth_for = vec![None; rgb.len()];
    for (i, j) in associate_timestamps(&rgb_t, &depth_t, DEPTH_ASSOCIATION_S) {
        depth_for[i] = Some(depth[j].1.clone());
    }

    let (width, height, color) = probe_image(&seq_dir.join(&rgb[0].1))?;
    let frames = rgb
        .into_iter()
        .zip(depth_for)
        .enumerate()
        .map(|(i, ((timestamp, image), depth))| FrameRecord {
            index: i,
            timestamp,
            images: vec![image],
            depth,
            source_position: i,
        })
        .collect::<Vec<_>>();

    Ok(SequenceManifest {
        dataset_type: DatasetKind::Tum,
        sequence_id: sequence_id.to_string(),
        dataset_root: root.to_path_buf(),
        sequence_rel,
        source_frame_count: frames.len(),
        frames,
        streams: vec![Stream::Left],
        calibration: vec![intrinsics_for(sequence_id, width, height)],
        color: vec![color],
        frame_rate_hz: FRAME_RATE_HZ,
        metadata_files,
        sidecar_files,
        ground_truth: None,
    })
}

/// Published factory intrinsics of the three Freiburg sensors; any other
/// resolution or sequence name falls back to a centred default.
fn intrinsics_for(sequence_id: &str, width: u32, height: u32) -> CameraIntrinsics {
    let id = sequence_id.to_ascii_lowercase();
    let known = [
        (["freiburg1", "fr1"], (517.3, 516.5, 318.6, 255.3)),
        (["freiburg2", "fr2"], (520.9, 521.0, 325.1, 249.7)),
        (["freiburg3", "fr3"], (535.4, 539.2, 320.1, 247.6)),
    ];
    if (width, height) == (640, 480) {
        for (names, (fx, fy, cx, cy)) in known {
            if names.iter().any(|n| id.contains(n)) {
                return CameraIntrinsics {
                    fx,
                    fy,
                    cx,
                    cy,
                    baseline: None,
                    width,
                    height,
                };
            }
        }
    }
    CameraIntrinsics::default_for(width, height)
}

fn read_list(path: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let (Some(ts), Some(file)) = (it.next(), it.next()) else {
            return Err(Error::Dataset(format!("{}: line {}: expected `timestamp path`", path.display(), i + 1)));
        };
        let ts: f64 = ts.parse().map_err(|_| {
            Error::Dataset(format!("{}: line {}: invalid timestamp", path.display(), i + 1))
        })?;
        out.push((ts, PathBuf::from(file)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Timestamps from file stems such as `1305031102.175304.png`.
fn from_filenames(seq_dir: &Path, sub: &str) -> Result<Vec<(f64, PathBuf)>> {
    let mut out = Vec::new();
    for p in list_images(&seq_dir.join(sub))? {
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let ts: f64 = stem.parse().map_err(|_| {
            Error::Dataset(format!("TUM image name `{}` is not a timestamp", p.display()))
        })?;
        out.push((ts, PathBuf::from(sub).join(name)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}
