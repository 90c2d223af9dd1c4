use std::path::Path;

use sal_core::boundary::{run_boundary_search, trial_bound, BoundaryStatus, SearchBounds};
use serde_json::json;

use crate::{
    ground_truth, load_config, open_dataset, systems, write_json, CliError, CliResult, OutputLock, Overrides,
    EXIT_NO_BOUNDARY,
};

/// Bisection over the configured parameter with the production evaluator.
/// Writes `boundary/<algorithm>/boundary_result.json`; probe data lives in
/// `boundary/<algorithm>/probes/`.
pub fn cmd_boundary(config: &Path, o: &Overrides) -> CliResult<Vec<String>> {
    let cfg = load_config(config, o)?;
    let b = cfg
        .boundary
        .clone()
        .ok_or_else(|| CliError::config("config has no robustness_boundary block"))?;
    let mut systems = systems(o)?;
    if systems.len() != 1 {
        return Err(CliError::config("boundary search takes exactly one --wrapper"));
    }
    let system = systems.remove(0);
    let manifest = open_dataset(&cfg)?;
    let dir = cfg.experiment_dir().join("boundary").join(system.id());
    let bounds = SearchBounds::from(&b);
    if o.dry_run {
        return Ok(vec![
            format!(
                "search {}.{} over [{}, {}] to tolerance {} with {} (fail when ATE RMSE > {} m)",
                b.target_perturbation, b.parameter, b.lower_bound, b.upper_bound, b.tolerance, system.id(), b.ate_rmse_fail
            ),
            format!("at most {} probes, each a perturbed copy plus one SLAM run", trial_bound(&bounds).min(2 + b.max_iters)),
            format!("write {}", dir.join("boundary_result.json").display()),
        ]);
    }
    let gt = ground_truth(&manifest)?;
    let _lock = OutputLock::acquire(&cfg.experiment_dir())?;
    let result = match run_boundary_search(&cfg, &system, &manifest, &gt, &dir.join("probes")) {
        Ok(r) => r,
        Err(e) => {
            let partial = json!({
                "error": e.source.to_string(),
                "trials": e.trials,
            });
            write_json(&dir.join("boundary_partial.json"), &partial)?;
            let mut err = CliError::from(e.source);
            err.lines.push(format!("{} probe(s) logged to {}", e.trials.len(), dir.join("boundary_partial.json").display()));
            return Err(err);
        }
    };
    let path = dir.join("boundary_result.json");
    write_json(&path, &result.to_json(&b))?;
    let mut lines: Vec<String> = result.table().lines().map(str::to_string).collect();
    lines.push(format!("result in {}", path.display()));
    match result.status {
        BoundaryStatus::AllFail | BoundaryStatus::NoBoundaryInRange => Err(CliError {
            code: EXIT_NO_BOUNDARY,
            message: format!("no robustness boundary in range: {}", result.status.as_str()),
            lines,
        }),
        BoundaryStatus::MaxItersReached => {
            log::warn!("max_iters reached before the bracket met the tolerance");
            Ok(lines)
        }
        BoundaryStatus::BracketFound => Ok(lines),
    }
}
