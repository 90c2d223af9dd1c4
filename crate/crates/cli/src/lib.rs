//! The four pipelines behind the `sal` binary. Each command reads an
//! experiment config, applies command-line overrides and returns the lines
//! it wants printed, or a [`CliError`] carrying the process exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime failure |
//! | 2 | configuration error |
//! | 3 | boundary search found no transition (`all_fail`, `no_boundary_in_range`) |

use std::fmt;
use std::path::{Path, PathBuf};

use sal_core::config::ExperimentConfig;
use sal_core::dataset::{open_selected, SequenceManifest};
use sal_core::features::TrackerParams;
use sal_core::slam::SlamSystem;
use sal_core::trajectory::Trajectory;

mod boundary;
mod lock;
mod odometry;
mod perturb;
mod slam_eval;

pub use boundary::cmd_boundary;
pub use lock::{OutputLock, LOCK_FILE};
pub use odometry::cmd_odometry;
pub use perturb::cmd_perturb;
pub use slam_eval::cmd_slam_eval;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_BOUNDARY: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Perturb,
    SlamEval,
    Odometry,
    Boundary,
}

/// Options shared by every subcommand, plus the few that only some use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Overrides {
    /// Replaces `output.base_dir`.
    pub output_dir: Option<PathBuf>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    /// `mock` or wrapper spec paths; defaults to `mock`.
    pub wrappers: Vec<String>,
    pub force: bool,
    pub dry_run: bool,
    /// Let `slam-eval` and `odometry` generate missing perturbed data.
    pub auto_perturb: bool,
    /// Directory of `<setting>.json` track files for `odometry`.
    pub tracks: Option<PathBuf>,
    /// JSON file with tracker parameters for `odometry`.
    pub tracker_params: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineInvocation {
    pub subcommand: Subcommand,
    pub config: PathBuf,
    pub overrides: Overrides,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    /// Lines worth printing even though the command failed.
    pub lines: Vec<String>,
}

impl CliError {
    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
            lines: Vec::new(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
            lines: Vec::new(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<sal_core::Error> for CliError {
    fn from(e: sal_core::Error) -> Self {
        Self {
            code: if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME },
            message: e.to_string(),
            lines: Vec::new(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Run one pipeline invocation.
pub fn run(inv: &PipelineInvocation) -> CliResult<Vec<String>> {
    match inv.subcommand {
        Subcommand::Perturb => cmd_perturb(&inv.config, &inv.overrides),
        Subcommand::SlamEval => cmd_slam_eval(&inv.config, &inv.overrides),
        Subcommand::Odometry => cmd_odometry(&inv.config, &inv.overrides),
        Subcommand::Boundary => cmd_boundary(&inv.config, &inv.overrides),
    }
}

/// Load the config and apply overrides. Relative dataset roots and output
/// directories in the file resolve against the file's directory.
pub fn load_config(path: &Path, o: &Overrides) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    if cfg.dataset.root.is_relative() {
        cfg.dataset.root = base.join(&cfg.dataset.root);
    }
    if let Some(gt) = cfg.dataset.ground_truth.as_mut().filter(|g| g.is_relative()) {
        *gt = base.join(&*gt);
    }
    if cfg.output_base_dir.is_relative() {
        cfg.output_base_dir = base.join(&cfg.output_base_dir);
    }
    if let Some(d) = &o.output_dir {
        cfg.output_base_dir = d.clone();
    }
    if let Some(r) = o.runs {
        if r == 0 {
            return Err(CliError::config("--runs must be >= 1"));
        }
        cfg.runs = r;
    }
    if let Some(s) = o.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn open_dataset(cfg: &ExperimentConfig) -> CliResult<SequenceManifest> {
    Ok(open_selected(&cfg.dataset)?)
}

fn ground_truth(manifest: &SequenceManifest) -> CliResult<Trajectory> {
    let path = manifest
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::config("dataset has no ground-truth trajectory; set dataset.ground_truth"))?;
    Ok(Trajectory::load_tum(path)?)
}

fn systems(o: &Overrides) -> CliResult<Vec<SlamSystem>> {
    if o.wrappers.is_empty() {
        return Ok(vec![SlamSystem::from_id("mock")?]);
    }
    o.wrappers
        .iter()
        .map(|id| SlamSystem::from_id(id).map_err(CliError::from))
        .collect()
}

fn tracker_params(o: &Overrides) -> CliResult<TrackerParams> {
    let Some(path) = &o.tracker_params else {
        return Ok(TrackerParams::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::runtime(format!("{}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json values serialize") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Perturbed copies in config order, generating missing ones when allowed.
fn perturbed_sequences(
    cfg: &ExperimentConfig,
    manifest: &SequenceManifest,
    auto_perturb: bool,
    lines: &mut Vec<String>,
) -> CliResult<Vec<(String, SequenceManifest)>> {
    let existing = sal_core::pipeline::existing_outputs(cfg, manifest)?;
    let missing: Vec<&str> = existing.iter().filter(|(_, m)| m.is_none()).map(|(n, _)| n.as_str()).collect();
    if missing.is_empty() {
        return Ok(existing.into_iter().map(|(n, m)| (n, m.expect("checked above"))).collect());
    }
    if !auto_perturb {
        return Err(CliError::runtime(format!(
            "perturbed data missing or stale for {}; run `sal perturb` first or pass --auto-perturb",
            missing.join(", ")
        )));
    }
    lines.push(format!("generating perturbed data for {}", missing.join(", ")));
    let out = sal_core::pipeline::run_perturbation_pipeline(cfg, manifest, Default::default())?;
    Ok(out.into_iter().map(|p| (p.name, p.manifest)).collect())
}

/// Lines describing what would be generated, for dry runs.
fn missing_plan(cfg: &ExperimentConfig, manifest: &SequenceManifest, auto_perturb: bool) -> CliResult<Vec<String>> {
    let existing = sal_core::pipeline::existing_outputs(cfg, manifest)?;
    let plan = sal_core::pipeline::plan_perturbation(cfg, manifest);
    let mut lines = Vec::new();
    for ((name, m), step) in existing.iter().zip(plan) {
        if m.is_none() {
            lines.push(if auto_perturb {
                step
            } else {
                format!("missing perturbed data for {name} (would fail without --auto-perturb)")
            });
        }
    }
    Ok(lines)
}
