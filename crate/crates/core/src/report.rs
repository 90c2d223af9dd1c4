//! Evaluation records and the on-disk results tree of a SLAM evaluation:
//!
//! ```text
//! slam_results/<algorithm>/
//!   trajectories/run_<N>/{baseline.txt, <perturbation>.txt}
//!   metrics/run_<N>/baseline/{ate.json, rpe.json}
//!   metrics/run_<N>/<perturbation>/{ate.json, rpe.json, vs_baseline.json}
//!   metrics/comparison/run_<N>/ate_comparison.{png,svg}
//!   metrics/summary.json
//!   metrics/aggregated_metrics.{png,svg}
//!   trajectory_plots/comparison/run_<N>/trajectory_comparison_<perturbation>.{png,svg}
//! ```
//!
//! A failed run writes no trajectory file; its `ate.json` and
//! `vs_baseline.json` carry the failure status instead.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::PerturbationSpec;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_runs, ate, delta_percent, rpe, Alignment, AteStats, GroupSummary, LevelSummary, RpeStats};
use crate::plot::{bar_plot, line_plot, Bar, Series, PALETTE};
use crate::slam::{RunStatus, SlamRunOutcome};
use crate::trajectory::Trajectory;

/// Name of the clean run in every results directory.
pub const BASELINE: &str = "baseline";

/// Projection used for trajectory plots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotPlane {
    /// Ground plane of a forward-driving camera (outdoor sequences).
    XZ,
    XY,
}

impl PlotPlane {
    pub fn for_outdoor(outdoor: bool) -> Self {
        if outdoor {
            PlotPlane::XZ
        } else {
            PlotPlane::XY
        }
    }

    fn project(self, p: &nalgebra::Vector3<f64>) -> (f64, f64) {
        match self {
            PlotPlane::XZ => (p.x, p.z),
            PlotPlane::XY => (p.x, p.y),
        }
    }

    fn labels(self) -> (&'static str, &'static str) {
        match self {
            PlotPlane::XZ => ("x [m]", "z [m]"),
            PlotPlane::XY => ("x [m]", "y [m]"),
        }
    }
}

/// One SLAM run scored against the reference trajectory.
#[derive(Clone, Debug)]
pub struct EvaluatedRun {
    pub name: String,
    pub status: RunStatus,
    pub trajectory: Option<Trajectory>,
    pub ate: Option<AteStats>,
    pub rpe: Option<RpeStats>,
    pub log_excerpt: String,
}

impl EvaluatedRun {
    /// Score `outcome`. A trajectory that cannot be associated with or
    /// aligned to the reference counts as a tracking failure.
    pub fn evaluate(name: impl Into<String>, outcome: SlamRunOutcome, reference: &Trajectory, alignment: Alignment) -> Self {
        let name = name.into();
        let SlamRunOutcome {
            status,
            trajectory,
            log_excerpt,
        } = outcome;
        let Some(traj) = trajectory.filter(|_| status == RunStatus::Completed) else {
            return Self {
                name,
                status,
                trajectory: None,
                ate: None,
                rpe: None,
                log_excerpt,
            };
        };
        match ate(reference, &traj, alignment) {
            Ok(a) => Self {
                name,
                status,
                rpe: rpe(reference, &traj, 1).ok(),
                ate: Some(a),
                trajectory: Some(traj),
                log_excerpt,
            },
            Err(e) => Self {
                name,
                status: RunStatus::TrackingFailure,
                trajectory: Some(traj),
                ate: None,
                rpe: None,
                log_excerpt: format!("{log_excerpt}\nunusable trajectory: {e}"),
            },
        }
    }

    pub fn rmse(&self) -> Option<f64> {
        self.ate.as_ref().map(|a| a.stats.rmse)
    }

    fn ate_json(&self) -> Value {
        match &self.ate {
            Some(a) => {
                let mut v = serde_json::to_value(a).expect("stats serialize");
                v["status"] = json!(self.status.as_str());
                v
            }
            None => json!({ "status": self.status.as_str(), "tracking_failure": true, "log": self.log_excerpt }),
        }
    }

    fn rpe_json(&self) -> Value {
        match &self.rpe {
            Some(r) => serde_json::to_value(r).expect("stats serialize"),
            None => json!({ "status": self.status.as_str(), "available": false }),
        }
    }
}

/// Baseline and perturbed evaluations of one run (1-based index).
#[derive(Clone, Debug)]
pub struct RunReport {
    pub run_index: usize,
    pub baseline: EvaluatedRun,
    pub perturbations: Vec<EvaluatedRun>,
}

/// Cross-run statistics for one algorithm.
#[derive(Clone, Debug)]
pub struct MetricsSummary {
    pub algorithm: String,
    pub runs: usize,
    pub alignment: Alignment,
    pub clean: LevelSummary,
    pub groups: Vec<GroupSummary>,
}

/// Group perturbations into severity sweeps (by `group`, listed order) and
/// aggregate each against the clean runs.
pub fn summarize(algorithm: &str, alignment: Alignment, runs: &[RunReport], specs: &[PerturbationSpec]) -> MetricsSummary {
    let level = |name: &str| -> Vec<Option<f64>> {
        runs.iter()
            .map(|r| r.perturbations.iter().find(|p| p.name == name).and_then(EvaluatedRun::rmse))
            .collect()
    };
    let clean = LevelSummary::from_runs(BASELINE, runs.iter().map(|r| r.baseline.rmse()).collect());
    let mut order: Vec<&str> = Vec::new();
    for s in specs {
        if !order.contains(&s.group_name()) {
            order.push(s.group_name());
        }
    }
    let groups = order
        .into_iter()
        .map(|g| {
            let levels = specs
                .iter()
                .filter(|s| s.group_name() == g)
                .map(|s| LevelSummary::from_runs(s.name.clone(), level(&s.name)))
                .collect();
            aggregate_runs(g, levels, &clean)
        })
        .collect();
    MetricsSummary {
        algorithm: algorithm.to_string(),
        runs: runs.len(),
        alignment,
        clean,
        groups,
    }
}

impl MetricsSummary {
    pub fn to_json(&self) -> Value {
        let mut per = Map::new();
        for g in &self.groups {
            let rmse: Map<String, Value> = g.levels.iter().map(|l| (l.name.clone(), json!(l.mean))).collect();
            let std: Map<String, Value> = g.levels.iter().map(|l| (l.name.clone(), json!(l.std))).collect();
            let failed: Vec<&str> = g.levels.iter().filter(|l| l.failed).map(|l| l.name.as_str()).collect();
            per.insert(
                g.group.clone(),
                json!({
                    "clean_rmse": g.clean_rmse,
                    "per_level_rmse": rmse,
                    "per_level_std": std,
                    "failed_levels": failed,
                    "delta_percent": g.delta_percent,
                    "delta_level": g.delta_level,
                    "levels": g.levels,
                }),
            );
        }
        json!({
            "algorithm": self.algorithm,
            "runs": self.runs,
            "alignment": self.alignment,
            "clean": {
                "rmse_mean": self.clean.mean,
                "rmse_std": self.clean.std,
                "runs": self.clean.runs,
            },
            "perturbations": per,
        })
    }
}

fn write_json(path: &Path, value: &Value, written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn vs_baseline(baseline: &EvaluatedRun, run: &EvaluatedRun) -> Value {
    let delta = match (baseline.rmse(), run.rmse()) {
        (Some(b), Some(p)) if b > 0.0 => Some(delta_percent(b, p)),
        _ => None,
    };
    json!({
        "perturbation": run.name,
        "status": run.status.as_str(),
        "tracking_failure": run.status != RunStatus::Completed || run.ate.is_none(),
        "baseline_status": baseline.status.as_str(),
        "baseline_rmse": baseline.rmse(),
        "perturbed_rmse": run.rmse(),
        "delta_percent": delta,
        "baseline_rpe_rmse": baseline.rpe.as_ref().map(|r| r.stats.rmse),
        "perturbed_rpe_rmse": run.rpe.as_ref().map(|r| r.stats.rmse),
    })
}

fn aligned_points(run: &EvaluatedRun, plane: PlotPlane) -> Option<Vec<(f64, f64)>> {
    let (traj, ate) = (run.trajectory.as_ref()?, run.ate.as_ref()?);
    Some(traj.positions().map(|p| plane.project(&ate.transform.apply(&p))).collect())
}

/// Write the per-run part of the tree for `run`.
pub fn emit_run_reports(root: &Path, run: &RunReport, reference: &Trajectory, plane: PlotPlane) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let n = run.run_index;
    let traj_dir = root.join("trajectories").join(format!("run_{n}"));
    let metrics_dir = root.join("metrics").join(format!("run_{n}"));
    std::fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    for r in std::iter::once(&run.baseline).chain(&run.perturbations) {
        if let Some(t) = &r.trajectory {
            let p = traj_dir.join(format!("{}.txt", r.name));
            t.save_tum(&p)?;
            written.push(p);
        }
        let dir = metrics_dir.join(&r.name);
        write_json(&dir.join("ate.json"), &r.ate_json(), &mut written)?;
        write_json(&dir.join("rpe.json"), &r.rpe_json(), &mut written)?;
        if r.name != BASELINE {
            write_json(&dir.join("vs_baseline.json"), &vs_baseline(&run.baseline, r), &mut written)?;
        }
    }

    let bars: Vec<Bar> = std::iter::once(&run.baseline)
        .chain(&run.perturbations)
        .enumerate()
        .map(|(i, r)| Bar {
            label: r.name.clone(),
            value: r.rmse(),
            error: None,
            color: PALETTE[i % PALETTE.len()],
        })
        .collect();
    let cmp = root.join("metrics").join("comparison").join(format!("run_{n}")).join("ate_comparison.png");
    written.extend(bar_plot(&format!("ATE RMSE, run {n}"), "m", &bars).save(&cmp)?);

    let plot_dir = root.join("trajectory_plots").join("comparison").join(format!("run_{n}"));
    let (xl, yl) = plane.labels();
    let gt: Vec<(f64, f64)> = reference.positions().map(|p| plane.project(&p)).collect();
    for r in &run.perturbations {
        let mut series = vec![Series {
            label: "reference".into(),
            points: gt.clone(),
            color: [0, 0, 0],
        }];
        if let Some(points) = aligned_points(&run.baseline, plane) {
            series.push(Series {
                label: BASELINE.into(),
                points,
                color: PALETTE[0],
            });
        }
        if let Some(points) = aligned_points(r, plane) {
            series.push(Series {
                label: r.name.clone(),
                points,
                color: PALETTE[4],
            });
        }
        let fig = line_plot(&format!("{} vs {BASELINE}, run {n}", r.name), xl, yl, &series);
        written.extend(fig.save(&plot_dir.join(format!("trajectory_comparison_{}.png", r.name)))?);
    }
    Ok(written)
}

/// Write `summary.json` and the aggregated plot.
pub fn emit_summary(root: &Path, summary: &MetricsSummary) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let metrics = root.join("metrics");
    write_json(&metrics.join("summary.json"), &summary.to_json(), &mut written)?;
    let mut bars = vec![Bar {
        label: BASELINE.into(),
        value: summary.clean.mean,
        error: summary.clean.std,
        color: PALETTE[0],
    }];
    for g in &summary.groups {
        for (k, l) in g.levels.iter().enumerate() {
            bars.push(Bar {
                label: l.name.clone(),
                value: l.mean,
                error: l.std,
                color: PALETTE[1 + k % (PALETTE.len() - 1)],
            });
        }
    }
    let title = format!("{}: mean ATE RMSE over {} run(s)", summary.algorithm, summary.runs);
    written.extend(bar_plot(&title, "m", &bars).save(&metrics.join("aggregated_metrics.png"))?);
    Ok(written)
}

/// Write the whole tree for `runs` under `root`.
pub fn emit_reports(
    root: &Path,
    runs: &[RunReport],
    summary: &MetricsSummary,
    reference: &Trajectory,
    plane: PlotPlane,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in runs {
        written.extend(emit_run_reports(root, r, reference, plane)?);
    }
    written.extend(emit_summary(root, summary)?);
    Ok(written)
}
