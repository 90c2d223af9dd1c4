use std::path::Path;

use sal_core::config::ExperimentConfig;
use sal_core::dataset::SequenceManifest;
use sal_core::features::{compare_tracking, load_tracks, run_tracking, stats_from_tracks, survival_csv, TrackingStats};
use sal_core::plot::{line_plot, Series, PALETTE};
use sal_core::report::BASELINE;
use serde_json::{json, Map, Value};

use crate::{
    load_config, missing_plan, open_dataset, perturbed_sequences, tracker_params, write_json, write_text, CliError,
    CliResult, OutputLock, Overrides,
};

fn setting_stats(
    name: &str,
    manifest: &SequenceManifest,
    o: &Overrides,
    params: &sal_core::features::TrackerParams,
) -> CliResult<(TrackingStats, Option<Value>)> {
    match &o.tracks {
        Some(dir) => {
            let path = dir.join(format!("{name}.json"));
            if !path.is_file() {
                return Err(CliError::config(format!("--tracks: no track file {} for `{name}`", path.display())));
            }
            Ok((stats_from_tracks(&load_tracks(&path)?, manifest.len()), None))
        }
        None => {
            let (tracks, stats) = run_tracking(manifest, params)?;
            Ok((stats, Some(serde_json::to_value(tracks).expect("tracks serialize"))))
        }
    }
}

fn comparison(cfg: &ExperimentConfig, clean: &TrackingStats, all: &[(String, TrackingStats)]) -> CliResult<Value> {
    let mut groups = Map::new();
    let mut order: Vec<&str> = Vec::new();
    for s in &cfg.perturbations {
        if !order.contains(&s.group_name()) {
            order.push(s.group_name());
        }
    }
    for g in order {
        let levels: Vec<(String, TrackingStats)> = cfg
            .perturbations
            .iter()
            .filter(|s| s.group_name() == g)
            .filter_map(|s| all.iter().find(|(n, _)| *n == s.name).cloned())
            .collect();
        let c = compare_tracking(clean, &levels)?;
        groups.insert(g.to_string(), serde_json::to_value(c).expect("comparison serializes"));
    }
    Ok(json!({ "clean_mean_track_length": clean.mean_track_length, "groups": groups }))
}

/// Feature tracking on the clean and perturbed sequences, written to
/// `odometry/` under the experiment directory:
/// `<setting>/{tracking_stats.json, survival.csv[, tracks.json]}`,
/// `comparison.json` and `survival.{png,svg}`.
pub fn cmd_odometry(config: &Path, o: &Overrides) -> CliResult<Vec<String>> {
    let cfg = load_config(config, o)?;
    let manifest = open_dataset(&cfg)?;
    let params = tracker_params(o)?;
    let out = cfg.experiment_dir().join("odometry");
    let source = if o.tracks.is_some() { "external tracks" } else { "built-in tracker" };
    if o.dry_run {
        let mut lines = missing_plan(&cfg, &manifest, o.auto_perturb)?;
        for name in std::iter::once(BASELINE).chain(cfg.perturbations.iter().map(|p| p.name.as_str())) {
            lines.push(format!("track {name} ({source}) -> {}", out.join(name).display()));
        }
        lines.push(format!("write {}", out.join("comparison.json").display()));
        return Ok(lines);
    }
    let _lock = OutputLock::acquire(&cfg.experiment_dir())?;
    let mut lines = Vec::new();
    let perturbed = perturbed_sequences(&cfg, &manifest, o.auto_perturb, &mut lines)?;

    let mut all = Vec::new();
    for (name, m) in std::iter::once((BASELINE.to_string(), manifest.clone())).chain(perturbed) {
        let (stats, tracks) = setting_stats(&name, &m, o, &params)?;
        let dir = out.join(&name);
        write_json(&dir.join("tracking_stats.json"), &serde_json::to_value(&stats).expect("stats serialize"))?;
        write_text(&dir.join("survival.csv"), &survival_csv(&stats))?;
        if let Some(t) = tracks {
            write_json(&dir.join("tracks.json"), &t)?;
        }
        let flag = if stats.total_matches == 0 { ", matching failure" } else { "" };
        lines.push(format!(
            "{name}: {} tracks, mean length {:.2} frames, {} matches{flag}",
            stats.n_tracks, stats.mean_track_length, stats.total_matches
        ));
        all.push((name, stats));
    }
    let (clean, levels) = all.split_first().expect("baseline is always present");
    let cmp = comparison(&cfg, &clean.1, levels)?;
    for (g, c) in cmp["groups"].as_object().expect("groups object") {
        if let (Some(d), Some(l)) = (c["delta_percent"].as_f64(), c["delta_level"].as_str()) {
            lines.push(format!("  {g} delta {} (at {l})", sal_core::metrics::format_delta(d)));
        }
    }
    write_json(&out.join("comparison.json"), &cmp)?;

    let series: Vec<Series> = all
        .iter()
        .enumerate()
        .map(|(i, (name, s))| Series {
            label: name.clone(),
            points: s.survival.iter().map(|&(t, f)| (t as f64, f)).collect(),
            color: PALETTE[i % PALETTE.len()],
        })
        .collect();
    line_plot("Feature track survival", "track length [frames]", "fraction of tracks", &series)
        .save(&out.join("survival.png"))?;
    lines.push(format!("  results in {}", out.display()));
    Ok(lines)
}
