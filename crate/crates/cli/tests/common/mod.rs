#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sal_core::dataset::{generate_synthetic_sequence, SyntheticSpec};

/// A synthetic KITTI-layout sequence plus an experiment config next to it.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Workspace {
    /// `perturbations` and `extra` are YAML fragments spliced into the config.
    pub fn new(spec: &SyntheticSpec, perturbations: &str, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_sequence(&dir.path().join("data"), "00", spec).unwrap();
        let config = dir.path().join("experiment.yaml");
        let text = format!(
            "experiment:\n  name: desk\n  master_seed: 42\ndataset:\n  type: kitti\n  root: data\n  sequence: \"00\"\n  depth:\n    - kind: file_dir\n      path: depth\n      scale: 256\nperturbations:\n{perturbations}output:\n  base_dir: out\n{extra}"
        );
        std::fs::write(&config, text).unwrap();
        Self { dir, config }
    }

    pub fn desk(perturbations: &str) -> Self {
        Self::new(&SyntheticSpec::desk_scale(), perturbations, "")
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.dir.path().join("out").join("desk")
    }

    pub fn sal(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sal"));
        cmd.args(args).arg("--config").arg(&self.config);
        cmd.output().unwrap()
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn files_under(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = walk(root)
        .into_iter()
        .map(|p| p.strip_prefix(root).unwrap().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else { return out };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

pub fn fog(name: &str, v: f64, group: Option<&str>) -> String {
    let g = group.map(|g| format!("    group: {g}\n")).unwrap_or_default();
    format!("  - name: {name}\n    type: fog\n{g}    parameters:\n      visibility_m: {v}\n")
}

/// Expected `slam_results/<algorithm>/` files for `runs` runs.
pub fn results_tree(perturbations: &[&str], runs: usize) -> Vec<String> {
    let mut v = Vec::new();
    for n in 1..=runs {
        v.push(format!("trajectories/run_{n}/baseline.txt"));
        v.push(format!("metrics/run_{n}/baseline/ate.json"));
        v.push(format!("metrics/run_{n}/baseline/rpe.json"));
        for ext in ["png", "svg"] {
            v.push(format!("metrics/comparison/run_{n}/ate_comparison.{ext}"));
        }
        for p in perturbations {
            v.push(format!("trajectories/run_{n}/{p}.txt"));
            for f in ["ate.json", "rpe.json", "vs_baseline.json"] {
                v.push(format!("metrics/run_{n}/{p}/{f}"));
            }
            for ext in ["png", "svg"] {
                v.push(format!("trajectory_plots/comparison/run_{n}/trajectory_comparison_{p}.{ext}"));
            }
        }
    }
    v.extend(["metrics/summary.json", "metrics/aggregated_metrics.png", "metrics/aggregated_metrics.svg"].map(String::from));
    v.sort();
    v
}
