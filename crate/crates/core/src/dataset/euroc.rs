use std::path::{Path, PathBuf};

use super::{
    probe_image, require_dir, CameraIntrinsics, FrameRecord, MetadataFile, MetadataKind,
    SequenceManifest, Stream,
};
use crate::config::DatasetKind;
use crate::error::{Error, Result};

const FRAME_RATE_HZ: f64 = 20.0;

pub(super) fn open(root: &Path, sequence_id: &str, load_stereo: bool) -> Result<SequenceManifest> {
    let sequence_rel = if root.join(sequence_id).join("mav0").is_dir() {
        PathBuf::from(sequence_id)
    } else {
        PathBuf::new()
    };
    let seq_dir = root.join(&sequence_rel);
    require_dir(&seq_dir.join("mav0/cam0/data"), "EuRoC mav0/cam0/data")?;

    let cams: &[(&str, Stream)] = if load_stereo {
        &[("cam0", Stream::Left), ("cam1", Stream::Right)]
    } else {
        &[("cam0", Stream::Left)]
    };
    let mut rows_per_cam = Vec::new();
    let mut metadata_files = Vec::new();
    let mut sidecar_files = Vec::new();
    let mut calibration = Vec::new();
    let mut colors = Vec::new();
    for &(cam, stream) in cams {
        let cam_dir = PathBuf::from("mav0").join(cam);
        if !seq_dir.join(&cam_dir).join("data").is_dir() {
            return Err(Error::Dataset(format!(
                "stereo requested but {} is absent",
                seq_dir.join(&cam_dir).join("data").display()
            )));
        }
        let csv = cam_dir.join("data.csv");
        let rows = read_data_csv(&seq_dir.join(&csv))?;
        if rows.is_empty() {
            return Err(Error::Dataset(format!("{} lists no frames", seq_dir.join(&csv).display())));
        }
        metadata_files.push(MetadataFile {
            path: csv,
            kind: MetadataKind::EurocCsv,
            stream,
        });
        let first = seq_dir.join(&cam_dir).join("data").join(&rows[0].1);
        let (width, height, color) = probe_image(&first)?;
        let sensor = cam_dir.join("sensor.yaml");
        let cal = if seq_dir.join(&sensor).is_file() {
            sidecar_files.push(sensor.clone());
            let text = std::fs::read_to_string(seq_dir.join(&sensor))
                .map_err(|e| Error::io(seq_dir.join(&sensor), e))?;
            parse_sensor_yaml(&text, width, height)
        } else {
            SensorCalib {
                intrinsics: CameraIntrinsics::default_for(width, height),
                t_bs: None,
            }
        };
        calibration.push(cal);
        colors.push(color);
        rows_per_cam.push((cam_dir, rows));
    }

    if load_stereo {
        let (l, r) = (&rows_per_cam[0].1, &rows_per_cam[1].1);
        if l.len() != r.len() || l.iter().zip(r).any(|(a, b)| a.0 != b.0) {
            return Err(Error::Dataset("cam0 and cam1 timestamps do not match row by row".into()));
        }
        if let (Some(a), Some(b)) = (calibration[0].t_bs, calibration[1].t_bs) {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            calibration[0].intrinsics.baseline = Some(d);
            calibration[1].intrinsics.baseline = Some(d);
        }
    }

    let left = &rows_per_cam[0].1;
    let frames = (0..left.len())
        .map(|i| FrameRecord {
            index: i,
            timestamp: left[i].0 as f64 * 1e-9,
            images: rows_per_cam
                .iter()
                .map(|(cam_dir, rows)| cam_dir.join("data").join(&rows[i].1))
                .collect(),
            depth: None,
            source_position: i,
        })
        .collect::<Vec<_>>();

    Ok(SequenceManifest {
        dataset_type: DatasetKind::Euroc,
        sequence_id: sequence_id.to_string(),
        dataset_root: root.to_path_buf(),
        sequence_rel,
        source_frame_count: frames.len(),
        frames,
        streams: cams.iter().map(|c| c.1).collect(),
        calibration: calibration.into_iter().map(|c| c.intrinsics).collect(),
        color: colors,
        frame_rate_hz: FRAME_RATE_HZ,
        metadata_files,
        sidecar_files,
        ground_truth: None,
    })
}

fn read_data_csv(path: &Path) -> Result<Vec<(u64, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = || Error::Dataset(format!("{}: line {}: expected `timestamp_ns,filename`", path.display(), i + 1));
        let (ts, file) = t.split_once(',').ok_or_else(bad)?;
        let ts: u64 = ts.trim().parse().map_err(|_| bad())?;
        rows.push((ts, file.trim().to_string()));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows)
}

struct SensorCalib {
    intrinsics: CameraIntrinsics,
    t_bs: Option<[f64; 3]>,
}

fn bracket_values(text: &str) -> Option<Vec<f64>> {
    let start = text.find('[')?;
    let end = start + text[start..].find(']')?;
    Some(
        text[start + 1..end]
            .split(',')
            .filter_map(|v| v.trim().parse().ok())
            .collect(),
    )
}

/// Pull `intrinsics: [fu, fv, cu, cv]` and the translation column of
/// `T_BS` out of a camera `sensor.yaml`.
fn parse_sensor_yaml(text: &str, width: u32, height: u32) -> SensorCalib {
    let mut intrinsics = CameraIntrinsics::default_for(width, height);
    if let Some(pos) = text.find("intrinsics:") {
        if let Some(v) = bracket_values(&text[pos..]).filter(|v| v.len() == 4) {
            intrinsics.fx = v[0];
            intrinsics.fy = v[1];
            intrinsics.cx = v[2];
            intrinsics.cy = v[3];
        }
    }
    let t_bs = text.find("T_BS").and_then(|pos| {
        let rest = &text[pos..];
        let data = rest.find("data:")?;
        let v = bracket_values(&rest[data..])?;
        (v.len() == 16).then(|| [v[3], v[7], v[11]])
    });
    SensorCalib { intrinsics, t_bs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensor_yaml_fields() {
        let text = "%YAML:1.0\nT_BS:\n  cols: 4\n  rows: 4\n  data: [0.0148, -0.9998, 0.0041, -0.0216,\n         0.9998, 0.0148, 0.0257, -0.0646,\n         -0.0257, 0.0037, 0.9996, 0.0098,\n         0.0, 0.0, 0.0, 1.0]\nresolution: [752, 480]\nintrinsics: [458.654, 457.296, 367.215, 248.375]\n";
        let c = parse_sensor_yaml(text, 752, 480);
        assert_eq!(c.intrinsics.fx, 458.654);
        assert_eq!(c.intrinsics.cy, 248.375);
        assert_eq!(c.t_bs, Some([-0.0216, -0.0646, 0.0098]));
    }
}
