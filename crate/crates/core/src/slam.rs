//! Running SLAM systems over clean and perturbed sequences.
//!
//! External systems are described by a [`SlamWrapperSpec`] (YAML): how to
//! stage the sequence, which settings file to pass, how to invoke the
//! executable and where to find its trajectory. The built-in mock stands in
//! for a real system at desk scale: it degrades ground truth in proportion
//! to how much image gradient the perturbation destroyed.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::DatasetKind;
use crate::dataset::{load_frame, SequenceManifest, Stream};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::rng_from_seed;
use crate::trajectory::{associate_timestamps, convert_trajectory, Pose, Trajectory};

pub const DEFAULT_TIMEOUT_S: f64 = 1800.0;
const PLACEHOLDERS: &[&str] = &["sequence_dir", "settings", "output"];
/// Output formats `convert_trajectory` understands.
pub const TRAJECTORY_FORMATS: &[&str] = &["tum", "json-pose-list"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagingMode {
    #[default]
    Symlink,
    Copy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagingRule {
    pub source: PathBuf,
    pub target: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagingSpec {
    pub mode: StagingMode,
    pub rules: Vec<StagingRule>,
    /// Also link top-level entries no rule mentions.
    pub include_unmapped: bool,
}

/// Maps sequences of one dataset to a settings file. `sequences` is an
/// exact id, a numeric range `"04-12"`, or `"*"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsRule {
    pub dataset: String,
    pub sequences: String,
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettingsSpec {
    /// Directory relative settings files are resolved against.
    pub base_dir: Option<PathBuf>,
    pub rules: Vec<SettingsRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Trajectory file, relative to the run directory.
    pub file: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "tum".into()
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlamWrapperSpec {
    pub algorithm: String,
    pub executable: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub settings: SettingsSpec,
    #[serde(default)]
    pub staging: StagingSpec,
    pub output: OutputSpec,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Log substrings that mark a run as a tracking failure.
    #[serde(default)]
    pub failure_markers: Vec<String>,
    /// A run that exits cleanly without a trajectory lost tracking.
    #[serde(default = "default_true")]
    pub missing_output_is_failure: bool,
    /// Use Sim(3) alignment when scoring this system's trajectories.
    #[serde(default)]
    pub monocular: bool,
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

impl SlamWrapperSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = serde_yaml::from_str(text).map_err(|e| Error::Config(format!("wrapper spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::parse(&text)?;
        // relative paths in a wrapper file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        if spec.executable.components().count() > 1 && spec.executable.is_relative() {
            spec.executable = base.join(&spec.executable);
        }
        match &spec.settings.base_dir {
            Some(d) if d.is_relative() => spec.settings.base_dir = Some(base.join(d)),
            None => spec.settings.base_dir = Some(base.to_path_buf()),
            _ => {}
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for arg in &self.args {
            for p in placeholders(arg) {
                if !PLACEHOLDERS.contains(&p.as_str()) {
                    return Err(Error::Config(format!(
                        "wrapper `{}`: unknown placeholder {{{p}}} in argument `{arg}`",
                        self.algorithm
                    )));
                }
            }
        }
        if !TRAJECTORY_FORMATS.contains(&self.output.format.as_str()) {
            return Err(Error::Config(format!(
                "wrapper `{}`: unknown output format `{}` (expected one of {})",
                self.algorithm,
                self.output.format,
                TRAJECTORY_FORMATS.join(", ")
            )));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config(format!("wrapper `{}`: timeout_s must be > 0", self.algorithm)));
        }
        Ok(())
    }

    /// Arguments with placeholders substituted.
    pub fn render_args(&self, sequence_dir: &Path, settings: Option<&Path>, output: &Path) -> Vec<String> {
        let settings = settings.map(|p| p.display().to_string()).unwrap_or_default();
        self.args
            .iter()
            .map(|a| {
                a.replace("{sequence_dir}", &sequence_dir.display().to_string())
                    .replace("{settings}", &settings)
                    .replace("{output}", &output.display().to_string())
            })
            .collect()
    }
}

fn sequence_in_range(pattern: &str, sequence: &str) -> bool {
    if pattern == "*" || pattern == sequence {
        return true;
    }
    let Some((lo, hi)) = pattern.split_once('-') else { return false };
    match (lo.trim().parse::<u64>(), hi.trim().parse::<u64>(), sequence.parse::<u64>()) {
        (Ok(lo), Ok(hi), Ok(s)) => (lo..=hi).contains(&s),
        _ => false,
    }
}

/// Settings file for `(dataset, sequence)`; the first matching rule wins.
/// `None` when the wrapper declares no settings rules at all.
pub fn resolve_settings(wrapper: &SlamWrapperSpec, dataset: DatasetKind, sequence: &str) -> Result<Option<PathBuf>> {
    if wrapper.settings.rules.is_empty() {
        return Ok(None);
    }
    let rule = wrapper
        .settings
        .rules
        .iter()
        .find(|r| r.dataset.eq_ignore_ascii_case(dataset.as_str()) && sequence_in_range(&r.sequences, sequence))
        .ok_or_else(|| {
            Error::Slam(format!(
                "wrapper `{}` has no settings for {} sequence `{sequence}`",
                wrapper.algorithm,
                dataset.as_str()
            ))
        })?;
    Ok(Some(match &wrapper.settings.base_dir {
        Some(base) if rule.file.is_relative() => base.join(&rule.file),
        _ => rule.file.clone(),
    }))
}

fn link_or_copy(mode: StagingMode, src: &Path, dst: &Path) -> Result<()> {
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match mode {
        #[cfg(unix)]
        StagingMode::Symlink => std::os::unix::fs::symlink(src, dst).map_err(|e| Error::io(dst, e)),
        #[cfg(not(unix))]
        StagingMode::Symlink => copy_tree(src, dst),
        StagingMode::Copy => copy_tree(src, dst),
    }
}

fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    if src.is_file() {
        std::fs::copy(src, dst).map_err(|e| Error::io(src, e))?;
        return Ok(());
    }
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry.map_err(|e| Error::Slam(format!("cannot walk {}: {e}", src.display())))?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under source");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        } else {
            std::fs::copy(entry.path(), &target).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    Ok(())
}

/// Lay out `sequence_dir` as the wrapper expects under `workdir/staged`.
/// Without rules the sequence is used in place.
pub fn stage_sequence(wrapper: &SlamWrapperSpec, sequence_dir: &Path, workdir: &Path) -> Result<PathBuf> {
    if !sequence_dir.is_dir() {
        return Err(Error::Slam(format!("sequence directory {} does not exist", sequence_dir.display())));
    }
    if wrapper.staging.rules.is_empty() {
        return Ok(sequence_dir.to_path_buf());
    }
    let source = sequence_dir
        .canonicalize()
        .map_err(|e| Error::io(sequence_dir, e))?;
    let staged = workdir.join("staged");
    if staged.exists() {
        std::fs::remove_dir_all(&staged).map_err(|e| Error::io(&staged, e))?;
    }
    std::fs::create_dir_all(&staged).map_err(|e| Error::io(&staged, e))?;
    for rule in &wrapper.staging.rules {
        let src = source.join(&rule.source);
        if !src.exists() {
            return Err(Error::Slam(format!(
                "staging rule {} -> {}: source {} does not exist",
                rule.source.display(),
                rule.target.display(),
                src.display()
            )));
        }
        link_or_copy(wrapper.staging.mode, &src, &staged.join(&rule.target))?;
    }
    if wrapper.staging.include_unmapped {
        for entry in std::fs::read_dir(&source).map_err(|e| Error::io(&source, e))? {
            let entry = entry.map_err(|e| Error::io(&source, e))?;
            let name = PathBuf::from(entry.file_name());
            let mentioned = wrapper.staging.rules.iter().any(|r| r.source.starts_with(&name) || r.target.starts_with(&name));
            if !mentioned {
                link_or_copy(wrapper.staging.mode, &entry.path(), &staged.join(&name))?;
            }
        }
    }
    Ok(staged)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    TrackingFailure,
    Timeout,
    Crashed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::TrackingFailure => "tracking_failure",
            RunStatus::Timeout => "timeout",
            RunStatus::Crashed => "crashed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlamRunOutcome {
    pub status: RunStatus,
    /// Present exactly when `status` is `Completed`.
    pub trajectory: Option<Trajectory>,
    pub log_excerpt: String,
}

impl SlamRunOutcome {
    fn failed(status: RunStatus, log_excerpt: impl Into<String>) -> Self {
        Self {
            status,
            trajectory: None,
            log_excerpt: log_excerpt.into(),
        }
    }
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

/// Run the wrapper's executable on a staged sequence. Output, stdout and
/// stderr land in `run_dir`.
pub fn execute_slam(
    wrapper: &SlamWrapperSpec,
    staged_dir: &Path,
    settings: Option<&Path>,
    run_index: usize,
    run_dir: &Path,
) -> Result<SlamRunOutcome> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let run_dir = run_dir.canonicalize().map_err(|e| Error::io(run_dir, e))?;
    let output = run_dir.join(&wrapper.output.file);
    if output.exists() {
        std::fs::remove_file(&output).map_err(|e| Error::io(&output, e))?;
    }
    let (out_log, err_log) = (run_dir.join("stdout.log"), run_dir.join("stderr.log"));
    let stdout = File::create(&out_log).map_err(|e| Error::io(&out_log, e))?;
    let stderr = File::create(&err_log).map_err(|e| Error::io(&err_log, e))?;
    let mut child = Command::new(&wrapper.executable)
        .args(wrapper.render_args(staged_dir, settings, &output))
        .current_dir(staged_dir)
        .env("SAL_RUN_INDEX", run_index.to_string())
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .spawn()
        .map_err(|e| Error::Slam(format!("cannot spawn {}: {e}", wrapper.executable.display())))?;

    let deadline = Instant::now() + Duration::from_secs_f64(wrapper.timeout_s);
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| Error::Slam(format!("waiting for child: {e}")))? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let logs = format!(
        "{}{}",
        std::fs::read_to_string(&out_log).unwrap_or_default(),
        std::fs::read_to_string(&err_log).unwrap_or_default()
    );
    let excerpt = tail(&logs, 20);
    let Some(status) = status else {
        return Ok(SlamRunOutcome::failed(
            RunStatus::Timeout,
            format!("timed out after {} s\n{excerpt}", wrapper.timeout_s),
        ));
    };
    let marked = wrapper.failure_markers.iter().any(|m| logs.contains(m.as_str()));
    if marked {
        return Ok(SlamRunOutcome::failed(RunStatus::TrackingFailure, excerpt));
    }
    if !status.success() {
        return Ok(SlamRunOutcome::failed(RunStatus::Crashed, format!("exit status {status}\n{excerpt}")));
    }
    if !output.is_file() {
        let st = if wrapper.missing_output_is_failure {
            RunStatus::TrackingFailure
        } else {
            RunStatus::Crashed
        };
        return Ok(SlamRunOutcome::failed(st, format!("no trajectory at {}\n{excerpt}", output.display())));
    }
    let raw = std::fs::read_to_string(&output).map_err(|e| Error::io(&output, e))?;
    match convert_trajectory(&raw, &wrapper.output.format) {
        Ok(t) if !t.is_empty() => Ok(SlamRunOutcome {
            status: RunStatus::Completed,
            trajectory: Some(t),
            log_excerpt: excerpt,
        }),
        Ok(_) => Ok(SlamRunOutcome::failed(RunStatus::TrackingFailure, "empty trajectory")),
        Err(e) => Ok(SlamRunOutcome::failed(RunStatus::Crashed, format!("unreadable trajectory: {e}"))),
    }
}

/// Tunables of the mock system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockSlamParams {
    /// Position noise at zero degradation, meters.
    pub sigma0_m: f64,
    /// Additional noise per unit mean degradation, meters.
    pub sigma1_m: f64,
    /// Mean degradation above which tracking is lost.
    pub failure_threshold: f64,
}

impl Default for MockSlamParams {
    fn default() -> Self {
        Self {
            sigma0_m: 0.01,
            sigma1_m: 2.0,
            failure_threshold: 0.9,
        }
    }
}

/// Sum of squared forward differences of luma.
pub fn gradient_energy(image: &Image) -> f64 {
    let (w, h) = image.dimensions();
    let lum = image.luma();
    let at = |x: u32, y: u32| f64::from(lum[y as usize * w as usize + x as usize]);
    let mut e = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                e += (at(x + 1, y) - at(x, y)).powi(2);
            }
            if y + 1 < h {
                e += (at(x, y + 1) - at(x, y)).powi(2);
            }
        }
    }
    e
}

/// Fraction of baseline gradient energy the perturbation removed, in [0, 1].
pub fn degradation_score(perturbed: &Image, baseline: &Image) -> f64 {
    let base = gradient_energy(baseline);
    if base <= 0.0 {
        return 0.0;
    }
    (1.0 - gradient_energy(perturbed) / base).clamp(0.0, 1.0)
}

/// Per-frame degradation of `perturbed` against `baseline`, frames paired
/// by reference-stream filename. Returns (baseline index, q) per frame.
pub fn degradation_profile(perturbed: &SequenceManifest, baseline: &SequenceManifest) -> Result<Vec<(usize, f64)>> {
    let by_name: HashMap<&Path, usize> = baseline
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.images[0].as_path(), i))
        .collect();
    if perturbed.len() > baseline.len() {
        return Err(Error::Slam(format!(
            "perturbed sequence has {} frames but the baseline only {}",
            perturbed.len(),
            baseline.len()
        )));
    }
    perturbed
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let j = *by_name.get(f.images[0].as_path()).ok_or_else(|| {
                Error::Slam(format!("perturbed frame {} has no baseline counterpart", f.images[0].display()))
            })?;
            let q = degradation_score(
                &load_frame(perturbed, i, Stream::Left)?,
                &load_frame(baseline, j, Stream::Left)?,
            );
            Ok((j, q))
        })
        .collect()
}

/// Deterministic stand-in for a SLAM system: ground truth plus Gaussian
/// position noise whose scale grows with the mean degradation score.
///
/// The noise realization depends only on `seed` and the baseline frame
/// index, so heavier perturbations scale the same draw.
pub fn mock_slam_run(
    manifest: &SequenceManifest,
    ground_truth: &Trajectory,
    baseline: &SequenceManifest,
    seed: u64,
    params: &MockSlamParams,
) -> Result<SlamRunOutcome> {
    let profile = degradation_profile(manifest, baseline)?;
    let mean_q = profile.iter().map(|(_, q)| q).sum::<f64>() / profile.len().max(1) as f64;
    if mean_q > params.failure_threshold {
        return Ok(SlamRunOutcome::failed(
            RunStatus::TrackingFailure,
            format!("mock: mean degradation {mean_q:.4} exceeds {}", params.failure_threshold),
        ));
    }
    let sigma = params.sigma0_m + params.sigma1_m * mean_q;
    let mut rng = rng_from_seed(seed);
    let noise: Vec<[f64; 3]> = (0..baseline.len())
        .map(|_| {
            let mut v = [0.0; 3];
            for c in &mut v {
                *c = StandardNormal.sample(&mut rng);
            }
            v
        })
        .collect();

    let frame_ts: Vec<f64> = manifest.frames.iter().map(|f| f.timestamp).collect();
    let gt_ts: Vec<f64> = ground_truth.poses().iter().map(|p| p.timestamp).collect();
    let pairs = associate_timestamps(&frame_ts, &gt_ts, 0.02);
    if pairs.len() != frame_ts.len() {
        return Err(Error::Slam(format!(
            "ground truth covers {} of {} frames",
            pairs.len(),
            frame_ts.len()
        )));
    }
    let poses = pairs
        .iter()
        .map(|&(i, g)| {
            let gt = &ground_truth.poses()[g];
            let n = noise[profile[i].0];
            Pose::new(frame_ts[i], gt.translation + sigma * Vector3::from(n), gt.rotation)
        })
        .collect();
    Ok(SlamRunOutcome {
        status: RunStatus::Completed,
        trajectory: Some(Trajectory::new(poses)?),
        log_excerpt: format!("mock: mean degradation {mean_q:.4}, sigma {sigma:.4} m"),
    })
}

/// A SLAM system the evaluation pipelines can run.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SlamSystem {
    Mock(MockSlamParams),
    External(SlamWrapperSpec),
}

/// Everything one SLAM run needs.
#[derive(Clone, Copy, Debug)]
pub struct SlamJob<'a> {
    pub sequence: &'a SequenceManifest,
    pub baseline: &'a SequenceManifest,
    pub ground_truth: Option<&'a Trajectory>,
    pub run_index: usize,
    pub seed: u64,
    /// Scratch directory for staging and child-process logs.
    pub work_dir: &'a Path,
}

impl SlamSystem {
    /// `mock`, or a path to a wrapper spec file.
    pub fn from_id(id: &str) -> Result<Self> {
        if id == "mock" {
            return Ok(SlamSystem::Mock(MockSlamParams::default()));
        }
        SlamWrapperSpec::load(Path::new(id)).map(SlamSystem::External)
    }

    pub fn id(&self) -> &str {
        match self {
            SlamSystem::Mock(_) => "mock",
            SlamSystem::External(w) => &w.algorithm,
        }
    }

    pub fn is_monocular(&self) -> bool {
        match self {
            SlamSystem::Mock(_) => true,
            SlamSystem::External(w) => w.monocular,
        }
    }

    pub fn run(&self, job: &SlamJob<'_>) -> Result<SlamRunOutcome> {
        match self {
            SlamSystem::Mock(p) => {
                let gt = job
                    .ground_truth
                    .ok_or_else(|| Error::Slam("the mock system needs a ground-truth trajectory".into()))?;
                mock_slam_run(job.sequence, gt, job.baseline, job.seed, p)
            }
            SlamSystem::External(w) => {
                let staged = stage_sequence(w, &job.sequence.sequence_dir(), job.work_dir)?;
                let settings = resolve_settings(w, job.sequence.dataset_type, &job.sequence.sequence_id)?;
                execute_slam(w, &staged, settings.as_deref(), job.run_index, &job.work_dir.join("run"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_rules() {
        assert!(sequence_in_range("04-12", "07"));
        assert!(sequence_in_range("00-02", "00"));
        assert!(!sequence_in_range("04-12", "03"));
        assert!(sequence_in_range("*", "MH_01"));
        assert!(!sequence_in_range("04-12", "MH_01"));
    }

    #[test]
    fn placeholder_scan() {
        assert_eq!(placeholders("{settings} x {output}"), vec!["settings", "output"]);
        assert!(placeholders("plain").is_empty());
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let text = "algorithm: a\nexecutable: /bin/true\nargs: ['{vocab}']\noutput: {file: t.txt}\n";
        assert!(matches!(SlamWrapperSpec::parse(text), Err(Error::Config(_))));
    }

    #[test]
    fn energy_of_flat_image_is_zero() {
        let flat = Image::filled(8, 8, [0.5; 3]);
        assert_eq!(gradient_energy(&flat), 0.0);
        let ramp = Image::from_fn(8, 8, |x, _| [x as f32 / 8.0; 3]);
        assert_eq!(degradation_score(&ramp, &ramp), 0.0);
        assert_eq!(degradation_score(&flat, &ramp), 1.0);
    }
}
