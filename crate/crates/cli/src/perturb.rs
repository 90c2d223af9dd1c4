use std::path::Path;

use sal_core::pipeline::{run_perturbation_pipeline, OutputStatus, PipelineOptions};

use crate::{load_config, open_dataset, CliResult, OutputLock, Overrides};

/// Generate every perturbed copy the config lists. Copies whose inputs and
/// files are unchanged are left alone unless `force` is set.
pub fn cmd_perturb(config: &Path, o: &Overrides) -> CliResult<Vec<String>> {
    let cfg = load_config(config, o)?;
    let manifest = open_dataset(&cfg)?;
    if o.dry_run {
        let mut lines = vec![format!(
            "dry run: {} perturbation(s) of {} {} ({} frames)",
            cfg.perturbations.len(),
            cfg.dataset.kind.as_str(),
            manifest.sequence_id,
            manifest.len()
        )];
        lines.extend(sal_core::pipeline::plan_perturbation(&cfg, &manifest));
        return Ok(lines);
    }
    let _lock = OutputLock::acquire(&cfg.experiment_dir())?;
    let out = run_perturbation_pipeline(&cfg, &manifest, PipelineOptions { force: o.force })?;
    Ok(out
        .iter()
        .map(|p| {
            let status = match p.status {
                OutputStatus::Generated => "generated",
                OutputStatus::UpToDate => "up-to-date",
            };
            format!("{}: {status} ({} frames) {}", p.name, p.manifest.len(), p.root.display())
        })
        .collect())
}
