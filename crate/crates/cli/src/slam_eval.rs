use std::path::Path;

use sal_core::evaluation::{evaluate_system, EvaluationInput};
use sal_core::metrics::format_delta;
use sal_core::report::{PlotPlane, BASELINE};

use crate::{
    ground_truth, load_config, missing_plan, open_dataset, perturbed_sequences, systems, CliError, CliResult,
    OutputLock, Overrides, EXIT_RUNTIME,
};

/// Run every selected SLAM system on the clean and perturbed sequences and
/// write `slam_results/<algorithm>/` under the experiment directory.
pub fn cmd_slam_eval(config: &Path, o: &Overrides) -> CliResult<Vec<String>> {
    let cfg = load_config(config, o)?;
    let manifest = open_dataset(&cfg)?;
    let systems = systems(o)?;
    let exp = cfg.experiment_dir();
    if o.dry_run {
        let mut lines = missing_plan(&cfg, &manifest, o.auto_perturb)?;
        for s in &systems {
            for n in 1..=cfg.runs {
                for name in std::iter::once(BASELINE).chain(cfg.perturbations.iter().map(|p| p.name.as_str())) {
                    lines.push(format!("run {} (run {n}) on {name}", s.id()));
                }
            }
            lines.push(format!("write {}", exp.join("slam_results").join(s.id()).display()));
        }
        return Ok(lines);
    }
    let gt = ground_truth(&manifest)?;
    let _lock = OutputLock::acquire(&exp)?;
    let mut lines = Vec::new();
    let perturbed = perturbed_sequences(&cfg, &manifest, o.auto_perturb, &mut lines)?;
    let mut crashed = 0;
    for system in &systems {
        let input = EvaluationInput {
            system,
            baseline: &manifest,
            perturbed: &perturbed,
            specs: &cfg.perturbations,
            ground_truth: &gt,
            runs: cfg.runs,
            master_seed: cfg.master_seed,
            plane: PlotPlane::for_outdoor(cfg.dataset.kind.is_outdoor()),
        };
        let root = exp.join("slam_results").join(system.id());
        // staging and child logs, kept for debugging
        let work = exp.join(".sal").join("slam").join(system.id());
        let e = evaluate_system(&input, &root, &work)?;
        let fmt = |v: Option<f64>| v.map_or("failed".to_string(), |v| format!("{v:.4}"));
        lines.push(format!(
            "{}: {} run(s), clean ATE RMSE {} m, {} failed execution(s)",
            system.id(),
            cfg.runs,
            fmt(e.summary.clean.mean),
            e.failures()
        ));
        for g in &e.summary.groups {
            for l in &g.levels {
                lines.push(format!("  {:<24} {}", l.name, fmt(l.mean)));
            }
            if let (Some(d), Some(level)) = (g.delta_percent, &g.delta_level) {
                lines.push(format!("  {} delta {} (at {level})", g.group, format_delta(d)));
            }
        }
        lines.push(format!("  results in {}", root.display()));
        if e.all_crashed() {
            crashed += 1;
        }
    }
    if crashed == systems.len() {
        return Err(CliError {
            code: EXIT_RUNTIME,
            message: "every SLAM execution crashed".into(),
            lines,
        });
    }
    Ok(lines)
}
