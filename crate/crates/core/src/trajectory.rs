//! Timestamped SE(3) trajectories in the TUM text convention.
//!
//! One pose per line, `timestamp tx ty tz qx qy qz qw`, single-space
//! separated; lines starting with `#` are comments.

use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(timestamp: f64, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            timestamp,
            translation,
            rotation,
        }
    }

    pub fn from_position(timestamp: f64, x: f64, y: f64, z: f64) -> Self {
        Self::new(timestamp, Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        for (i, w) in poses.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Trajectory(format!(
                    "timestamps must be strictly increasing (pose {} at {} after {})",
                    i + 1,
                    w[1].timestamp,
                    w[0].timestamp
                )));
            }
        }
        if let Some(p) = poses.iter().find(|p| !p.timestamp.is_finite()) {
            return Err(Error::Trajectory(format!("non-finite timestamp {}", p.timestamp)));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.poses.iter().map(|p| p.translation)
    }

    pub fn load_tum(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_tum_trajectory(&text)
    }

    pub fn save_tum(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, write_tum_trajectory(self)).map_err(|e| Error::io(path, e))
    }
}

fn unit_quaternion(qx: f64, qy: f64, qz: f64, qw: f64) -> Option<UnitQuaternion<f64>> {
    let q = Quaternion::new(qw, qx, qy, qz);
    let n = q.norm();
    (n.is_finite() && n > 1e-12).then(|| UnitQuaternion::from_quaternion(q))
}

/// Parse TUM text. Quaternions are re-normalized.
pub fn parse_tum_trajectory(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::TrajectoryLine {
                line: line_no,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 8];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| Error::TrajectoryLine {
                line: line_no,
                message: format!("invalid number `{field}`"),
            })?;
        }
        let rotation = unit_quaternion(v[4], v[5], v[6], v[7]).ok_or(Error::TrajectoryLine {
            line: line_no,
            message: "degenerate quaternion".into(),
        })?;
        if let Some(prev) = poses.last().map(|p: &Pose| p.timestamp) {
            if !(v[0] > prev) {
                return Err(Error::TrajectoryLine {
                    line: line_no,
                    message: format!("timestamp {} is not after {}", v[0], prev),
                });
            }
        }
        poses.push(Pose::new(v[0], Vector3::new(v[1], v[2], v[3]), rotation));
    }
    Trajectory::new(poses)
}

/// Write TUM text with nine fractional digits per value.
pub fn write_tum_trajectory(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.len() * 100);
    for p in &traj.poses {
        let q = p.rotation.quaternion();
        let t = &p.translation;
        out.push_str(&format!(
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        ));
    }
    out
}

/// Greedy nearest-timestamp association of two sorted timestamp lists.
///
/// Candidate pairs with `|a - b| <= max_dt` are taken in order of increasing
/// time difference, each index used at most once. The result is sorted by
/// the index into `a`.
pub fn associate_timestamps(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let start = b.partition_point(|&tb| tb < ta - max_dt);
        for (j, &tb) in b.iter().enumerate().skip(start) {
            if tb > ta + max_dt {
                break;
            }
            candidates.push(((ta - tb).abs(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonPose {
    timestamp: f64,
    translation: [f64; 3],
    /// (qx, qy, qz, qw)
    quaternion: [f64; 4],
}

/// Convert a raw SLAM output file to a trajectory. Built-in formats:
/// `tum` and `json-pose-list` (array of `{timestamp, translation[3],
/// quaternion[4]}` with quaternions ordered `qx qy qz qw`).
pub fn convert_trajectory(text: &str, format: &str) -> Result<Trajectory> {
    match format {
        "tum" => parse_tum_trajectory(text),
        "json-pose-list" => {
            let list: Vec<JsonPose> = serde_json::from_str(text)
                .map_err(|e| Error::Trajectory(format!("json-pose-list schema mismatch: {e}")))?;
            let poses = list
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let [qx, qy, qz, qw] = p.quaternion;
                    let rotation = unit_quaternion(qx, qy, qz, qw)
                        .ok_or_else(|| Error::Trajectory(format!("pose {i}: degenerate quaternion")))?;
                    Ok(Pose::new(p.timestamp, Vector3::from(p.translation), rotation))
                })
                .collect::<Result<Vec<_>>>()?;
            Trajectory::new(poses)
        }
        other => Err(Error::Trajectory(format!("unknown trajectory format `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_line() {
        let t = parse_tum_trajectory("0.0 0 0 0 0 0 0 1").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses()[0].timestamp, 0.0);
        assert_eq!(t.poses()[0].translation, Vector3::zeros());
        assert_eq!(t.poses()[0].rotation, UnitQuaternion::identity());
    }

    #[test]
    fn field_count_error_reports_line() {
        let err = parse_tum_trajectory("0 0 0 0 0 0 1").unwrap_err();
        assert_eq!(err.to_string(), "trajectory: line 1: expected 8 fields, found 7");
    }

    #[test]
    fn comments_skipped_and_monotonicity_enforced() {
        let t = parse_tum_trajectory("# header\n0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 1\n").unwrap();
        assert_eq!(t.len(), 2);
        let err = parse_tum_trajectory("1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::TrajectoryLine { line: 2, .. }));
    }

    #[test]
    fn json_pose_list() {
        let text = r#"[{"timestamp": 0.0, "translation": [0,0,0], "quaternion": [0,0,0,1]},
                       {"timestamp": 0.1, "translation": [1,2,3], "quaternion": [0,0,0.7071068,0.7071068]}]"#;
        let t = convert_trajectory(text, "json-pose-list").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.poses()[1].translation, Vector3::new(1.0, 2.0, 3.0));
        assert!(convert_trajectory(r#"[{"t": 1}]"#, "json-pose-list").is_err());
        assert!(convert_trajectory(text, "kitti").is_err());
        assert_eq!(
            convert_trajectory("0 0 0 0 0 0 0 1", "tum").unwrap(),
            parse_tum_trajectory("0 0 0 0 0 0 0 1").unwrap()
        );
    }

    proptest! {
        #[test]
        fn tum_round_trip(
            raw in proptest::collection::vec(
                (0.001f64..1.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0,
                 -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
                1..100)
        ) {
            let mut t = 1_305_031_102.0;
            let poses: Vec<Pose> = raw.iter().map(|&(dt, x, y, z, qx, qy, qz, qw)| {
                t += dt;
                Pose::new(t, Vector3::new(x, y, z), unit_quaternion(qx, qy, qz, qw).unwrap())
            }).collect();
            let traj = Trajectory::new(poses).unwrap();
            let back = parse_tum_trajectory(&write_tum_trajectory(&traj)).unwrap();
            prop_assert_eq!(back.len(), traj.len());
            for (a, b) in traj.poses().iter().zip(back.poses()) {
                prop_assert!((a.timestamp - b.timestamp).abs() <= 1e-9);
                prop_assert!((a.translation - b.translation).amax() <= 1e-9);
                prop_assert!(a.rotation.angle_to(&b.rotation) < 1e-8);
            }
        }
    }
}
