//! Bisection search for the severity at which SLAM flips between passing
//! and failing an ATE threshold.
//!
//! ```
//! use sal_core::boundary::{boundary_search, Measurement, SearchBounds, BoundaryStatus};
//! use sal_core::engine::ParamDomain;
//!
//! let bounds = SearchBounds { lower: 10.0, upper: 20.0, tolerance: 2.0, max_iters: 10, ate_rmse_fail: 1.5 };
//! let ate = |v: f64| match v as i64 { 10 => 2.3, 20 => 0.8, 15 => 1.1, _ => 1.4 };
//! let r = boundary_search(&bounds, ParamDomain::Integer, |v| Ok(Measurement::ate(ate(v)))).unwrap();
//! assert_eq!(r.status, BoundaryStatus::BracketFound);
//! let values: Vec<f64> = r.trials.iter().map(|t| t.value).collect();
//! assert_eq!(values, [10.0, 20.0, 15.0, 12.0]);
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{BoundaryConfig, ExperimentConfig, PerturbationSpec};
use crate::dataset::{DepthChain, SequenceManifest};
use crate::engine::{override_param, resolve_boundary_param, ParamDomain, ParamTarget};
use crate::error::{Error, Result};
use crate::metrics::{ate, Alignment};
use crate::pipeline::{perturb_sequence, PipelineOptions};
use crate::slam::{RunStatus, SlamJob, SlamSystem};
use crate::seed::derive_run_seed;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Pass,
    Fail,
}

/// What an evaluator observed at one probe value.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    /// `None` when no usable trajectory was produced.
    pub ate_rmse: Option<f64>,
    pub failure: Option<String>,
}

impl Measurement {
    pub fn ate(rmse: f64) -> Self {
        Self {
            ate_rmse: Some(rmse),
            failure: None,
        }
    }

    pub fn failure(marker: impl Into<String>) -> Self {
        Self {
            ate_rmse: None,
            failure: Some(marker.into()),
        }
    }

    pub fn classify(&self, ate_rmse_fail: f64) -> Classification {
        match self.ate_rmse {
            Some(a) if self.failure.is_none() && a <= ate_rmse_fail => Classification::Pass,
            _ => Classification::Fail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// Probe value after integer rounding, before canonicalization.
    pub value: f64,
    pub ate_rmse: Option<f64>,
    pub failure: Option<String>,
    pub classification: Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStatus {
    BracketFound,
    NoBoundaryInRange,
    AllFail,
    MaxItersReached,
}

impl BoundaryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryStatus::BracketFound => "bracket_found",
            BoundaryStatus::NoBoundaryInRange => "no_boundary_in_range",
            BoundaryStatus::AllFail => "all_fail",
            BoundaryStatus::MaxItersReached => "max_iters_reached",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Low values fail, high values pass.
    FailLow,
    FailHigh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub fail: TrialOutcome,
    pub pass: TrialOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub status: BoundaryStatus,
    pub orientation: Option<Orientation>,
    pub bracket: Option<Bracket>,
    pub trials: Vec<TrialOutcome>,
}

/// Numeric part of a boundary configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchBounds {
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    /// Midpoint evaluations allowed after the two endpoints.
    pub max_iters: usize,
    pub ate_rmse_fail: f64,
}

impl From<&BoundaryConfig> for SearchBounds {
    fn from(c: &BoundaryConfig) -> Self {
        Self {
            lower: c.lower_bound,
            upper: c.upper_bound,
            tolerance: c.tolerance,
            max_iters: c.max_iters,
            ate_rmse_fail: c.ate_rmse_fail,
        }
    }
}

/// Evaluator failure, with the trials completed before it.
#[derive(Debug, thiserror::Error)]
#[error("{source} (after {} trial(s))", trials.len())]
pub struct SearchError {
    pub trials: Vec<TrialOutcome>,
    #[source]
    pub source: Error,
}

impl From<SearchError> for Error {
    fn from(e: SearchError) -> Self {
        Error::Boundary(e.to_string())
    }
}

struct Prober<F> {
    evaluate: F,
    ate_rmse_fail: f64,
    cache: HashMap<u64, TrialOutcome>,
    trials: Vec<TrialOutcome>,
}

impl<F: FnMut(f64) -> Result<Measurement>> Prober<F> {
    fn probe(&mut self, value: f64) -> std::result::Result<TrialOutcome, SearchError> {
        if let Some(t) = self.cache.get(&value.to_bits()) {
            return Ok(t.clone());
        }
        let m = (self.evaluate)(value).map_err(|source| SearchError {
            trials: self.trials.clone(),
            source,
        })?;
        let t = TrialOutcome {
            value,
            classification: m.classify(self.ate_rmse_fail),
            ate_rmse: m.ate_rmse,
            failure: m.failure,
        };
        self.cache.insert(value.to_bits(), t.clone());
        self.trials.push(t.clone());
        Ok(t)
    }
}

/// Bisect `[lower, upper]` for the pass/fail transition.
///
/// Both endpoints are evaluated first and fix the orientation. Each step
/// probes the midpoint of the current fail and pass values (floored in the
/// integer domain) and replaces the side with the same classification,
/// until the two are within `tolerance` or `max_iters` midpoints have run.
/// A repeated probe value is served from cache and, since the bracket can
/// no longer shrink, ends the search as found.
pub fn boundary_search<F>(
    bounds: &SearchBounds,
    domain: ParamDomain,
    evaluate: F,
) -> std::result::Result<BoundaryResult, SearchError>
where
    F: FnMut(f64) -> Result<Measurement>,
{
    let invalid = |msg: String| SearchError {
        trials: Vec::new(),
        source: Error::Config(format!("robustness_boundary: {msg}")),
    };
    if !(bounds.lower < bounds.upper) || !(bounds.tolerance > 0.0) {
        return Err(invalid("need lower_bound < upper_bound and tolerance > 0".into()));
    }
    if domain == ParamDomain::Integer && (bounds.lower.fract() != 0.0 || bounds.upper.fract() != 0.0) {
        return Err(invalid("bounds of an integer parameter must be integers".into()));
    }
    let mut p = Prober {
        evaluate,
        ate_rmse_fail: bounds.ate_rmse_fail,
        cache: HashMap::new(),
        trials: Vec::new(),
    };
    let lo = p.probe(bounds.lower)?;
    let hi = p.probe(bounds.upper)?;
    let (mut fail, mut pass, orientation) = match (lo.classification, hi.classification) {
        (Classification::Pass, Classification::Pass) => return Ok(done(BoundaryStatus::NoBoundaryInRange, None, None, p)),
        (Classification::Fail, Classification::Fail) => return Ok(done(BoundaryStatus::AllFail, None, None, p)),
        (Classification::Fail, Classification::Pass) => (lo, hi, Orientation::FailLow),
        (Classification::Pass, Classification::Fail) => (hi, lo, Orientation::FailHigh),
    };
    let mut midpoints = 0;
    let status = loop {
        if (fail.value - pass.value).abs() <= bounds.tolerance {
            break BoundaryStatus::BracketFound;
        }
        if midpoints >= bounds.max_iters {
            break BoundaryStatus::MaxItersReached;
        }
        let mut mid = (fail.value + pass.value) / 2.0;
        if domain == ParamDomain::Integer {
            mid = mid.floor();
        }
        if mid == fail.value || mid == pass.value {
            break BoundaryStatus::BracketFound;
        }
        let t = p.probe(mid)?;
        midpoints += 1;
        match t.classification {
            Classification::Fail => fail = t,
            Classification::Pass => pass = t,
        }
    };
    Ok(done(status, Some(orientation), Some(Bracket { fail, pass }), p))
}

fn done<F>(status: BoundaryStatus, orientation: Option<Orientation>, bracket: Option<Bracket>, p: Prober<F>) -> BoundaryResult {
    BoundaryResult {
        status,
        orientation,
        bracket,
        trials: p.trials,
    }
}

/// Evaluations an incremental sweep needs: step by `step` from the passing
/// end of the range toward the failing end and stop at the first failure.
pub fn sweep_trial_count(bounds: &SearchBounds, step: f64, orientation: Orientation, mut is_fail: impl FnMut(f64) -> bool) -> usize {
    let n_points = ((bounds.upper - bounds.lower) / step + 1e-9).floor() as usize + 1;
    for k in 0..n_points {
        let v = match orientation {
            Orientation::FailLow => bounds.upper - k as f64 * step,
            Orientation::FailHigh => bounds.lower + k as f64 * step,
        };
        if is_fail(v) {
            return k + 1;
        }
    }
    n_points
}

/// Upper bound on trials for a monotone response:
/// `2 + ceil(log2((upper - lower) / tolerance)) + 1`.
pub fn trial_bound(bounds: &SearchBounds) -> usize {
    let r = ((bounds.upper - bounds.lower) / bounds.tolerance).log2().ceil().max(0.0);
    3 + r as usize
}

impl BoundaryResult {
    pub fn to_json(&self, cfg: &BoundaryConfig) -> Value {
        let bracket = self.bracket.as_ref().map(|b| {
            serde_json::json!({
                "fail": trial_json(&b.fail),
                "pass": trial_json(&b.pass),
                "width": (b.fail.value - b.pass.value).abs(),
            })
        });
        serde_json::json!({
            "status": self.status.as_str(),
            "orientation": self.orientation,
            "target_perturbation": cfg.target_perturbation,
            "parameter": cfg.parameter,
            "lower_bound": cfg.lower_bound,
            "upper_bound": cfg.upper_bound,
            "tolerance": cfg.tolerance,
            "max_iters": cfg.max_iters,
            "ate_rmse_fail": cfg.ate_rmse_fail,
            "bracket": bracket,
            "n_trials": self.trials.len(),
            "trials": self.trials.iter().map(trial_json).collect::<Vec<_>>(),
        })
    }

    /// Plain-text summary: bracket line plus one row per trial.
    pub fn table(&self) -> String {
        let mut out = format!("status: {}\n", self.status.as_str());
        if let Some(b) = &self.bracket {
            out.push_str(&format!(
                "bracket: fail {} ({}) / pass {} ({})\n",
                b.fail.value,
                ate_label(&b.fail),
                b.pass.value,
                ate_label(&b.pass)
            ));
        }
        out.push_str("  #  value      ate_rmse  result\n");
        for (i, t) in self.trials.iter().enumerate() {
            let c = match t.classification {
                Classification::Pass => "pass",
                Classification::Fail => "fail",
            };
            out.push_str(&format!("{:>3}  {:<9}  {:>8}  {c}\n", i + 1, t.value, ate_label(t)));
        }
        out
    }
}

fn ate_label(t: &TrialOutcome) -> String {
    match t.ate_rmse {
        Some(a) if t.failure.is_none() => format!("{a:.3}"),
        _ => "x".to_string(),
    }
}

fn trial_json(t: &TrialOutcome) -> Value {
    serde_json::json!({
        "value": t.value,
        "ate_rmse": t.ate_rmse,
        "tracking_failure": t.ate_rmse.is_none() || t.failure.is_some(),
        "failure": t.failure,
        "classification": t.classification,
    })
}

/// Check a `boundary_result.json` document against the schema written by
/// [`BoundaryResult::to_json`].
pub fn validate_result_json(v: &Value) -> Result<()> {
    let bad = |m: &str| Error::Boundary(format!("boundary_result.json: {m}"));
    let obj = v.as_object().ok_or_else(|| bad("top level must be an object"))?;
    let status = obj.get("status").and_then(Value::as_str).ok_or_else(|| bad("missing status"))?;
    if !["bracket_found", "no_boundary_in_range", "all_fail", "max_iters_reached"].contains(&status) {
        return Err(bad(&format!("unknown status `{status}`")));
    }
    match obj.get("orientation") {
        Some(Value::Null) | None if status != "bracket_found" && status != "max_iters_reached" => {}
        Some(Value::String(s)) if s == "fail_low" || s == "fail_high" => {}
        _ => return Err(bad("orientation must be fail_low or fail_high when a bracket exists")),
    }
    for key in ["target_perturbation", "parameter"] {
        obj.get(key).and_then(Value::as_str).ok_or_else(|| bad(&format!("missing {key}")))?;
    }
    for key in ["lower_bound", "upper_bound", "tolerance", "ate_rmse_fail"] {
        obj.get(key).and_then(Value::as_f64).ok_or_else(|| bad(&format!("missing {key}")))?;
    }
    let check_trial = |t: &Value| -> Result<()> {
        t.get("value").and_then(Value::as_f64).ok_or_else(|| bad("trial without value"))?;
        let c = t.get("classification").and_then(Value::as_str).ok_or_else(|| bad("trial without classification"))?;
        if c != "pass" && c != "fail" {
            return Err(bad("classification must be pass or fail"));
        }
        let failure = t.get("tracking_failure").and_then(Value::as_bool).ok_or_else(|| bad("trial without tracking_failure"))?;
        match t.get("ate_rmse") {
            Some(Value::Null) if failure => Ok(()),
            Some(a) if a.is_f64() || a.is_u64() => Ok(()),
            _ => Err(bad("ate_rmse must be a number, or null with tracking_failure")),
        }
    };
    let trials = obj.get("trials").and_then(Value::as_array).ok_or_else(|| bad("missing trials"))?;
    trials.iter().try_for_each(check_trial)?;
    if obj.get("n_trials").and_then(Value::as_u64) != Some(trials.len() as u64) {
        return Err(bad("n_trials disagrees with trials"));
    }
    match obj.get("bracket") {
        Some(Value::Null) if status == "no_boundary_in_range" || status == "all_fail" => Ok(()),
        Some(b) if b.is_object() => {
            check_trial(&b["fail"])?;
            check_trial(&b["pass"])?;
            if b["fail"]["classification"] != "fail" || b["pass"]["classification"] != "pass" {
                return Err(bad("bracket sides carry the wrong classification"));
            }
            Ok(())
        }
        _ => Err(bad("bracket must be an object, or null when no transition was found")),
    }
}

/// Probe evaluator over the real pipelines: override the parameter, write
/// the perturbed copy, run SLAM and take ATE against ground truth.
pub struct ProductionEvaluator<'a> {
    spec: PerturbationSpec,
    target: ParamTarget,
    manifest: &'a SequenceManifest,
    depth: DepthChain,
    system: &'a SlamSystem,
    ground_truth: &'a Trajectory,
    work_dir: PathBuf,
    master_seed: u64,
    alignment: Alignment,
    probes: usize,
}

impl<'a> ProductionEvaluator<'a> {
    pub fn new(
        config: &ExperimentConfig,
        system: &'a SlamSystem,
        manifest: &'a SequenceManifest,
        ground_truth: &'a Trajectory,
        work_dir: &Path,
    ) -> Result<Self> {
        let b = config
            .boundary
            .as_ref()
            .ok_or_else(|| Error::Config("no robustness_boundary block in the config".into()))?;
        let spec = config
            .perturbation(&b.target_perturbation)
            .ok_or_else(|| Error::Config(format!("unknown target_perturbation `{}`", b.target_perturbation)))?
            .clone();
        let target = resolve_boundary_param(&spec, &b.parameter)?;
        Ok(Self {
            target,
            depth: DepthChain::from_config(&config.dataset.depth, manifest)?,
            spec,
            manifest,
            system,
            ground_truth,
            work_dir: work_dir.to_path_buf(),
            master_seed: config.master_seed,
            alignment: Alignment::for_monocular(system.is_monocular()),
            probes: 0,
        })
    }

    pub fn domain(&self) -> ParamDomain {
        self.target.spec.domain
    }

    /// The perturbation a probe at `value` runs with.
    pub fn probe_spec(&self, value: f64) -> PerturbationSpec {
        override_param(&self.spec, &self.target, self.target.spec.module_value(value))
    }

    pub fn evaluate(&mut self, value: f64) -> Result<Measurement> {
        self.probes += 1;
        let spec = self.probe_spec(value);
        let probe_dir = self.work_dir.join(format!("probe_{value}"));
        let out = perturb_sequence(
            &spec,
            self.manifest,
            &self.depth,
            &probe_dir.join("data"),
            self.master_seed,
            PipelineOptions::default(),
        )?;
        let job = SlamJob {
            sequence: &out.manifest,
            baseline: self.manifest,
            ground_truth: Some(self.ground_truth),
            run_index: 1,
            seed: derive_run_seed(self.master_seed, self.system.id(), 1),
            work_dir: &probe_dir.join("slam"),
        };
        let outcome = self.system.run(&job)?;
        if outcome.status != RunStatus::Completed {
            return Ok(Measurement::failure(outcome.status.as_str()));
        }
        let Some(traj) = outcome.trajectory else {
            return Ok(Measurement::failure(RunStatus::TrackingFailure.as_str()));
        };
        Ok(match ate(self.ground_truth, &traj, self.alignment) {
            Ok(a) => Measurement::ate(a.stats.rmse),
            Err(_) => Measurement::failure(RunStatus::TrackingFailure.as_str()),
        })
    }

    /// Number of probes evaluated so far.
    pub fn probes(&self) -> usize {
        self.probes
    }
}

/// Run the configured boundary search end to end.
pub fn run_boundary_search(
    config: &ExperimentConfig,
    system: &SlamSystem,
    manifest: &SequenceManifest,
    ground_truth: &Trajectory,
    work_dir: &Path,
) -> std::result::Result<BoundaryResult, SearchError> {
    let wrap = |source| SearchError { trials: Vec::new(), source };
    let cfg = config
        .boundary
        .as_ref()
        .ok_or_else(|| wrap(Error::Config("no robustness_boundary block in the config".into())))?;
    let mut eval = ProductionEvaluator::new(config, system, manifest, ground_truth, work_dir).map_err(wrap)?;
    let domain = eval.domain();
    boundary_search(&SearchBounds::from(cfg), domain, |v| eval.evaluate(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_rule() {
        assert_eq!(Measurement::ate(1.5).classify(1.5), Classification::Pass);
        assert_eq!(Measurement::ate(1.51).classify(1.5), Classification::Fail);
        assert_eq!(Measurement::failure("timeout").classify(1.5), Classification::Fail);
    }

    #[test]
    fn sweep_counts() {
        let b = SearchBounds { lower: 10.0, upper: 200.0, tolerance: 5.0, max_iters: 10, ate_rmse_fail: 1.0 };
        assert_eq!(sweep_trial_count(&b, 5.0, Orientation::FailLow, |v| v <= 21.0), 37);
        let b = SearchBounds { lower: 10.0, upper: 50.0, tolerance: 3.0, ..b };
        assert_eq!(sweep_trial_count(&b, 3.0, Orientation::FailHigh, |v| v >= 47.0), 14);
    }
}
