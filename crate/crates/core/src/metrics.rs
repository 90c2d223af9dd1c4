//! Trajectory error metrics: timestamp association, Umeyama alignment,
//! ATE and RPE statistics, and multi-run aggregation.

use nalgebra::{Isometry3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{associate_timestamps, Trajectory};

/// Default association tolerance, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    Se3,
    Sim3,
}

impl Alignment {
    /// Sim(3) for scale-ambiguous monocular estimates, SE(3) otherwise.
    pub fn for_monocular(monocular: bool) -> Self {
        if monocular {
            Alignment::Sim3
        } else {
            Alignment::Se3
        }
    }
}

/// `p -> scale * rotation * p + translation`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SimilarityRecord", from = "SimilarityRecord")]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Serialized form: row-major rotation.
#[derive(Clone, Serialize, Deserialize)]
struct SimilarityRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    scale: f64,
}

impl From<Similarity> for SimilarityRecord {
    fn from(s: Similarity) -> Self {
        let r = &s.rotation;
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: s.translation.into(),
            scale: s.scale,
        }
    }
}

impl From<SimilarityRecord> for Similarity {
    fn from(r: SimilarityRecord) -> Self {
        Self {
            rotation: Matrix3::from_fn(|i, j| r.rotation[i][j]),
            translation: Vector3::from(r.translation),
            scale: r.scale,
        }
    }
}

/// Index pairs `(reference, estimate)` matched within `max_dt` seconds.
pub fn associate(reference: &Trajectory, estimate: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>> {
    if reference.is_empty() || estimate.is_empty() {
        return Err(Error::Metrics("cannot associate an empty trajectory".into()));
    }
    let ts = |t: &Trajectory| t.poses().iter().map(|p| p.timestamp).collect::<Vec<_>>();
    let pairs = associate_timestamps(&ts(reference), &ts(estimate), max_dt);
    if pairs.is_empty() {
        return Err(Error::Metrics(format!("no pose pairs within {max_dt} s")));
    }
    Ok(pairs)
}

/// Least-squares transform taking `est` onto `reference`: minimizes
/// `sum |ref_i - (s R est_i + t)|^2`, with `s = 1` unless `with_scale`.
pub fn umeyama_align(reference: &[Vector3<f64>], est: &[Vector3<f64>], with_scale: bool) -> Result<Similarity> {
    if reference.len() != est.len() {
        return Err(Error::Metrics(format!(
            "point counts differ ({} vs {})",
            reference.len(),
            est.len()
        )));
    }
    if reference.len() < 3 {
        return Err(Error::Metrics(format!("alignment needs >= 3 pairs, got {}", reference.len())));
    }
    let n = reference.len() as f64;
    let mu_r = reference.iter().sum::<Vector3<f64>>() / n;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (r, e) in reference.iter().zip(est) {
        let (rc, ec) = (r - mu_r, e - mu_e);
        cov += rc * ec.transpose();
        var_e += ec.norm_squared();
    }
    cov /= n;
    var_e /= n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let mut d = svd.singular_values;
    // nalgebra does not promise an ordering
    let mut sorted: Vec<f64> = d.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-10 * sorted[0] {
        return Err(Error::Metrics("degenerate point set (collinear or coincident)".into()));
    }
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // flip the axis of the smallest singular value to avoid a reflection
        let k = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("three values");
        s[(k, k)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        d.component_mul_assign(&s.diagonal());
        d.sum() / var_e
    } else {
        1.0
    };
    Ok(Similarity {
        translation: mu_r - scale * (rotation * mu_e),
        rotation,
        scale,
    })
}

/// Summary statistics over a set of non-negative errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n_pairs: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Metrics("no errors to summarize".into()));
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            (sorted[m - 1] + sorted[m]) / 2.0
        } else {
            sorted[m]
        };
        Ok(Self {
            rmse: sq.sqrt(),
            mean,
            median,
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            n_pairs: errors.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteStats {
    #[serde(flatten)]
    pub stats: ErrorStats,
    pub alignment: Alignment,
    pub transform: Similarity,
}

/// Absolute trajectory error over associated positions.
pub fn ate(reference: &Trajectory, estimate: &Trajectory, alignment: Alignment) -> Result<AteStats> {
    ate_with_tolerance(reference, estimate, alignment, DEFAULT_MAX_DT)
}

pub fn ate_with_tolerance(
    reference: &Trajectory,
    estimate: &Trajectory,
    alignment: Alignment,
    max_dt: f64,
) -> Result<AteStats> {
    let pairs = associate(reference, estimate, max_dt)?;
    let r: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| reference.poses()[i].translation).collect();
    let e: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| estimate.poses()[j].translation).collect();
    let transform = match alignment {
        Alignment::None => Similarity::identity(),
        Alignment::Se3 => umeyama_align(&r, &e, false)?,
        Alignment::Sim3 => umeyama_align(&r, &e, true)?,
    };
    let errors: Vec<f64> = r.iter().zip(&e).map(|(r, e)| (r - transform.apply(e)).norm()).collect();
    Ok(AteStats {
        stats: ErrorStats::from_errors(&errors)?,
        alignment,
        transform,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpeStats {
    #[serde(flatten)]
    pub stats: ErrorStats,
    pub delta: usize,
    pub delta_unit: String,
}

/// Translational relative pose error over a fixed frame interval `delta`.
pub fn rpe(reference: &Trajectory, estimate: &Trajectory, delta: usize) -> Result<RpeStats> {
    if delta == 0 {
        return Err(Error::Metrics("rpe delta must be >= 1".into()));
    }
    let pairs = associate(reference, estimate, DEFAULT_MAX_DT)?;
    if pairs.len() <= delta {
        return Err(Error::Metrics(format!(
            "rpe with delta {delta} needs > {delta} pose pairs, got {}",
            pairs.len()
        )));
    }
    let iso = |t: &Trajectory, k: usize| -> Isometry3<f64> { t.poses()[k].isometry() };
    let errors: Vec<f64> = (0..pairs.len() - delta)
        .map(|i| {
            let ((ri, ei), (rj, ej)) = (pairs[i], pairs[i + delta]);
            let q = iso(reference, ri).inverse() * iso(reference, rj);
            let p = iso(estimate, ei).inverse() * iso(estimate, ej);
            (q.inverse() * p).translation.vector.norm()
        })
        .collect();
    Ok(RpeStats {
        stats: ErrorStats::from_errors(&errors)?,
        delta,
        delta_unit: "frames".into(),
    })
}

/// `100 * (value - clean) / clean`
pub fn delta_percent(clean: f64, value: f64) -> f64 {
    100.0 * (value - clean) / clean
}

/// Compact label for a percent change: `+173%`, `-2%`, `+22k%`.
pub fn format_delta(delta: f64) -> String {
    let r = delta.round();
    if r.abs() >= 10_000.0 {
        format!("{:+}k%", (r / 1000.0).trunc() as i64)
    } else {
        format!("{:+}%", r as i64)
    }
}

/// One severity level across runs; `None` marks a failed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub name: String,
    pub runs: Vec<Option<f64>>,
    /// Mean over completed runs.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub failed_runs: usize,
    /// No run completed.
    pub failed: bool,
}

impl LevelSummary {
    pub fn from_runs(name: impl Into<String>, runs: Vec<Option<f64>>) -> Self {
        let ok: Vec<f64> = runs.iter().flatten().copied().collect();
        let (mean, std) = if ok.is_empty() {
            (None, None)
        } else {
            let m = ok.iter().sum::<f64>() / ok.len() as f64;
            let v = ok.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ok.len() as f64;
            (Some(m), Some(v.sqrt()))
        };
        Self {
            name: name.into(),
            failed_runs: runs.len() - ok.len(),
            failed: ok.is_empty(),
            runs,
            mean,
            std,
        }
    }
}

/// A perturbation's severity levels against the clean baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub clean_rmse: Option<f64>,
    pub levels: Vec<LevelSummary>,
    /// Change from clean at the most severe level, or the one below it
    /// when the most severe level failed.
    pub delta_percent: Option<f64>,
    pub delta_level: Option<String>,
}

/// Aggregate levels (ordered mild to severe) against `clean`.
pub fn aggregate_runs(group: impl Into<String>, levels: Vec<LevelSummary>, clean: &LevelSummary) -> GroupSummary {
    let basis = levels
        .iter()
        .rev()
        .take(2)
        .find(|l| !l.failed)
        .and_then(|l| l.mean.map(|m| (l.name.clone(), m)));
    let (delta_percent, delta_level) = match (clean.mean, basis) {
        (Some(c), Some((name, v))) if c > 0.0 => (Some(delta_percent(c, v)), Some(name)),
        _ => (None, None),
    };
    GroupSummary {
        group: group.into(),
        clean_rmse: clean.mean,
        levels,
        delta_percent,
        delta_level,
    }
}
