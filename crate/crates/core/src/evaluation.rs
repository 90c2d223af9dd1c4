//! Clean-versus-perturbed SLAM evaluation: every run executes the system on
//! the baseline and on each perturbed copy, scores the trajectories and
//! writes the results tree described in [`crate::report`].

use std::path::{Path, PathBuf};

use crate::config::PerturbationSpec;
use crate::dataset::SequenceManifest;
use crate::error::{Error, Result};
use crate::metrics::Alignment;
use crate::report::{emit_reports, summarize, EvaluatedRun, MetricsSummary, PlotPlane, RunReport, BASELINE};
use crate::seed::derive_run_seed;
use crate::slam::{RunStatus, SlamJob, SlamRunOutcome, SlamSystem};
use crate::trajectory::Trajectory;

/// Everything one evaluation reads.
#[derive(Clone, Copy, Debug)]
pub struct EvaluationInput<'a> {
    pub system: &'a SlamSystem,
    pub baseline: &'a SequenceManifest,
    /// Perturbed copies, named as in `specs`.
    pub perturbed: &'a [(String, SequenceManifest)],
    pub specs: &'a [PerturbationSpec],
    pub ground_truth: &'a Trajectory,
    pub runs: usize,
    pub master_seed: u64,
    pub plane: PlotPlane,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub runs: Vec<RunReport>,
    pub summary: MetricsSummary,
    /// Every file written under the results root.
    pub written: Vec<PathBuf>,
}

impl Evaluation {
    fn all(&self) -> impl Iterator<Item = &EvaluatedRun> {
        self.runs.iter().flat_map(|r| std::iter::once(&r.baseline).chain(&r.perturbations))
    }

    /// True when no SLAM execution got as far as producing a verdict.
    pub fn all_crashed(&self) -> bool {
        self.all().all(|r| r.status == RunStatus::Crashed)
    }

    pub fn failures(&self) -> usize {
        self.all().filter(|r| r.ate.is_none()).count()
    }
}

fn run_one(system: &SlamSystem, job: &SlamJob<'_>) -> SlamRunOutcome {
    system.run(job).unwrap_or_else(|e| SlamRunOutcome {
        status: RunStatus::Crashed,
        trajectory: None,
        log_excerpt: e.to_string(),
    })
}

/// Run the evaluation, writing results under `results_root` and scratch
/// files under `work_dir`. A failed SLAM execution is recorded and the
/// evaluation moves on.
pub fn evaluate_system(input: &EvaluationInput<'_>, results_root: &Path, work_dir: &Path) -> Result<Evaluation> {
    if input.runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    if input.perturbed.iter().any(|(name, _)| name == BASELINE) {
        return Err(Error::Config(format!("`{BASELINE}` is reserved for the clean sequence")));
    }
    let system = input.system;
    let alignment = Alignment::for_monocular(system.is_monocular());
    let mut runs = Vec::with_capacity(input.runs);
    for n in 1..=input.runs {
        let seed = derive_run_seed(input.master_seed, system.id(), n);
        let eval = |name: &str, seq: &SequenceManifest| {
            let job = SlamJob {
                sequence: seq,
                baseline: input.baseline,
                ground_truth: Some(input.ground_truth),
                run_index: n,
                seed,
                work_dir: &work_dir.join(format!("run_{n}")).join(name),
            };
            let r = EvaluatedRun::evaluate(name, run_one(system, &job), input.ground_truth, alignment);
            match r.rmse() {
                Some(v) => log::info!("{} run {n} {name}: ATE RMSE {v:.4} m", system.id()),
                None => log::warn!("{} run {n} {name}: {}", system.id(), r.status.as_str()),
            }
            r
        };
        let baseline = eval(BASELINE, input.baseline);
        let perturbations = input.perturbed.iter().map(|(name, m)| eval(name, m)).collect();
        runs.push(RunReport {
            run_index: n,
            baseline,
            perturbations,
        });
    }
    let summary = summarize(system.id(), alignment, &runs, input.specs);
    let written = emit_reports(results_root, &runs, &summary, input.ground_truth, input.plane)?;
    Ok(Evaluation { runs, summary, written })
}
