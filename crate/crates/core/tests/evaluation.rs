use std::path::{Path, PathBuf};

use sal_core::config::{parse_experiment_config, ExperimentConfig};
use sal_core::dataset::{generate_synthetic_sequence, SequenceManifest, SyntheticSpec};
use sal_core::evaluation::{evaluate_system, Evaluation, EvaluationInput};
use sal_core::pipeline::{run_perturbation_pipeline, PipelineOptions};
use sal_core::report::PlotPlane;
use sal_core::slam::{RunStatus, SlamSystem, SlamWrapperSpec};
use sal_core::trajectory::Trajectory;

struct Setup {
    dir: tempfile::TempDir,
    config: ExperimentConfig,
    manifest: SequenceManifest,
    gt: Trajectory,
    perturbed: Vec<(String, SequenceManifest)>,
}

fn setup(perturbations: &str) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, gt) = generate_synthetic_sequence(&dir.path().join("data"), "00", &SyntheticSpec::desk_scale()).unwrap();
    let text = format!(
        "experiment:\n  name: e2e\n  master_seed: 42\ndataset:\n  type: kitti\n  root: {}\n  sequence: \"00\"\n  depth:\n    - kind: file_dir\n      path: depth\n      scale: 256\nperturbations:\n{perturbations}output:\n  base_dir: {}\n",
        dir.path().join("data").display(),
        dir.path().join("out").display()
    );
    let config = parse_experiment_config(&text).unwrap();
    let perturbed = run_perturbation_pipeline(&config, &manifest, PipelineOptions::default())
        .unwrap()
        .into_iter()
        .map(|p| (p.name, p.manifest))
        .collect();
    Setup {
        dir,
        config,
        manifest,
        gt,
        perturbed,
    }
}

fn fog_sweep() -> String {
    [200, 50, 20, 10]
        .iter()
        .map(|v| format!("  - name: fog_{v}\n    type: fog\n    group: fog\n    parameters:\n      visibility_m: {v}\n"))
        .collect()
}

fn evaluate(s: &Setup, system: &SlamSystem, runs: usize) -> (Evaluation, PathBuf) {
    let input = EvaluationInput {
        system,
        baseline: &s.manifest,
        perturbed: &s.perturbed,
        specs: &s.config.perturbations,
        ground_truth: &s.gt,
        runs,
        master_seed: s.config.master_seed,
        plane: PlotPlane::XZ,
    };
    let root = s.config.experiment_dir().join("slam_results").join(system.id());
    let work = s.dir.path().join("work");
    (evaluate_system(&input, &root, &work).unwrap(), root)
}

fn tree(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn golden(names: &[&str], runs: usize) -> Vec<String> {
    let mut v = Vec::new();
    for n in 1..=runs {
        v.push(format!("trajectories/run_{n}/baseline.txt"));
        v.push(format!("metrics/run_{n}/baseline/ate.json"));
        v.push(format!("metrics/run_{n}/baseline/rpe.json"));
        for ext in ["png", "svg"] {
            v.push(format!("metrics/comparison/run_{n}/ate_comparison.{ext}"));
        }
        for p in names {
            v.push(format!("trajectories/run_{n}/{p}.txt"));
            for f in ["ate.json", "rpe.json", "vs_baseline.json"] {
                v.push(format!("metrics/run_{n}/{p}/{f}"));
            }
            for ext in ["png", "svg"] {
                v.push(format!("trajectory_plots/comparison/run_{n}/trajectory_comparison_{p}.{ext}"));
            }
        }
    }
    v.push("metrics/summary.json".into());
    v.push("metrics/aggregated_metrics.png".into());
    v.push("metrics/aggregated_metrics.svg".into());
    v.sort();
    v
}

#[test]
fn fog_sweep_tree_and_monotone_ate() {
    let s = setup(&fog_sweep());
    let (e, root) = evaluate(&s, &SlamSystem::from_id("mock").unwrap(), 1);
    assert_eq!(tree(&root), golden(&["fog_200", "fog_50", "fog_20", "fog_10"], 1));
    let r = &e.runs[0];
    let mut ates = vec![r.baseline.rmse().unwrap()];
    ates.extend(r.perturbations.iter().map(|p| p.rmse().expect("no fog level loses tracking")));
    assert!(ates.windows(2).all(|w| w[0] <= w[1]), "{ates:?}");

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("metrics/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["perturbations"]["fog"]["delta_level"], "fog_10");
    let vs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("metrics/run_1/fog_50/vs_baseline.json")).unwrap()).unwrap();
    assert_eq!(vs["tracking_failure"], false);
    assert!(vs["delta_percent"].as_f64().unwrap() > 0.0);
}

#[test]
fn mock_evaluation_is_deterministic() {
    let s = setup(&fog_sweep());
    let mock = SlamSystem::from_id("mock").unwrap();
    let (_, root) = evaluate(&s, &mock, 1);
    let first = std::fs::read(root.join("trajectories/run_1/fog_20.txt")).unwrap();
    let (_, root) = evaluate(&s, &mock, 1);
    assert_eq!(std::fs::read(root.join("trajectories/run_1/fog_20.txt")).unwrap(), first);
}

#[test]
fn three_runs_aggregate() {
    let s = setup("  - name: fog_50\n    type: fog\n    parameters:\n      visibility_m: 50\n");
    let (e, root) = evaluate(&s, &SlamSystem::from_id("mock").unwrap(), 3);
    assert_eq!(tree(&root), golden(&["fog_50"], 3));
    assert_eq!(e.summary.runs, 3);
    assert_eq!(e.summary.clean.runs.len(), 3);
    // different noise per run
    let a = std::fs::read(root.join("trajectories/run_1/baseline.txt")).unwrap();
    let b = std::fs::read(root.join("trajectories/run_2/baseline.txt")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn tracking_failure_is_recorded_and_others_complete() {
    let p = "  - name: fog_1\n    type: fog\n    parameters:\n      visibility_m: 1\n  - name: fog_100\n    type: fog\n    parameters:\n      visibility_m: 100\n";
    let s = setup(p);
    let (e, root) = evaluate(&s, &SlamSystem::from_id("mock").unwrap(), 1);
    assert_eq!(e.runs[0].perturbations[0].status, RunStatus::TrackingFailure);
    assert_eq!(e.runs[0].perturbations[1].status, RunStatus::Completed);
    assert!(!root.join("trajectories/run_1/fog_1.txt").exists());
    let vs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("metrics/run_1/fog_1/vs_baseline.json")).unwrap()).unwrap();
    assert_eq!(vs["tracking_failure"], true);
    assert_eq!(vs["status"], "tracking_failure");
    assert!(!e.all_crashed());
}

#[cfg(unix)]
fn write_wrapper(dir: &Path, body: &str) -> SlamSystem {
    use std::os::unix::fs::PermissionsExt;
    let script = dir.join("fake_slam.sh");
    std::fs::write(&script, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let spec = format!(
        "algorithm: fake\nexecutable: {}\nargs: ['{{sequence_dir}}', '{{output}}']\noutput:\n  file: traj.txt\nfailure_markers: ['Tracking lost']\ntimeout_s: 20\n",
        script.display()
    );
    let path = dir.join("fake.yaml");
    std::fs::write(&path, spec).unwrap();
    let sys = SlamSystem::from_id(path.to_str().unwrap()).unwrap();
    assert!(matches!(&sys, SlamSystem::External(w) if *w == SlamWrapperSpec::load(&path).unwrap()));
    sys
}

#[cfg(unix)]
#[test]
fn external_wrapper_round_trip() {
    let p = "  - name: fog_50\n    type: fog\n    parameters:\n      visibility_m: 50\n  - name: drop\n    type: frame_drop\n    parameters:\n      mode: periodic\n      period: 2\n";
    let s = setup(p);
    // reports ground truth; gives up when frames are missing
    let sys = write_wrapper(
        s.dir.path(),
        "if [ \"$(wc -l < \"$1/times.txt\")\" -lt 20 ]; then echo 'Tracking lost'; exit 0; fi\ncp \"$1/groundtruth.txt\" \"$2\"",
    );
    let (e, root) = evaluate(&s, &sys, 1);
    let r = &e.runs[0];
    assert!(r.baseline.rmse().unwrap() < 1e-6);
    assert!(r.perturbations[0].rmse().unwrap() < 1e-6);
    assert_eq!(r.perturbations[1].status, RunStatus::TrackingFailure);
    assert!(root.ends_with("slam_results/fake"));
    assert!(s.dir.path().join("work/run_1/baseline/run/stdout.log").is_file());
}

#[cfg(unix)]
#[test]
fn crashing_wrapper_reports_all_crashed() {
    let s = setup("  - name: fog_50\n    type: fog\n    parameters:\n      visibility_m: 50\n");
    let sys = write_wrapper(s.dir.path(), "echo boom >&2; exit 3");
    let (e, root) = evaluate(&s, &sys, 1);
    assert!(e.all_crashed());
    assert_eq!(e.failures(), 2);
    assert!(root.join("metrics/summary.json").is_file());
}
