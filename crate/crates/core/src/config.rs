//! Experiment configuration.
//!
//! The YAML layout follows the experiment files users already write:
//!
//! ```yaml
//! experiment:
//!   name: kitti_fog_rain_soiling
//! dataset:
//!   type: kitti
//!   sequence: "07"
//!   max_frames: 200
//!   load_stereo: true
//! perturbations:
//!   - name: fog_example
//!     type: fog
//!     parameters:
//!       visibility_m: 100.0
//! output:
//!   base_dir: ./results/experiments
//! ```
//!
//! Parsing happens in two stages: a permissive-typed but key-strict raw
//! document (`deny_unknown_fields` everywhere), then validation into the
//! domain types with field paths in every error message.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Kitti,
    Tum,
    Euroc,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Some(Self::Kitti),
            "tum" => Some(Self::Tum),
            "euroc" => Some(Self::Euroc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Kitti => "kitti",
            Self::Tum => "tum",
            Self::Euroc => "euroc",
        }
    }

    /// Outdoor datasets are plotted in the X-Z plane, indoor ones in X-Y.
    pub fn is_outdoor(self) -> bool {
        matches!(self, Self::Kitti)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Registered perturbation module types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModuleKind {
    Fog,
    Rain,
    Night,
    LensSoiling,
    CrackedLens,
    MotionBlur,
    NetworkDegradation,
    FrameDrop,
    Composite,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 9] = [
        Self::Fog,
        Self::Rain,
        Self::Night,
        Self::LensSoiling,
        Self::CrackedLens,
        Self::MotionBlur,
        Self::NetworkDegradation,
        Self::FrameDrop,
        Self::Composite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fog => "fog",
            Self::Rain => "rain",
            Self::Night => "night",
            Self::LensSoiling => "lens_soiling",
            Self::CrackedLens => "cracked_lens",
            Self::MotionBlur => "motion_blur",
            Self::NetworkDegradation => "network_degradation",
            Self::FrameDrop => "frame_drop",
            Self::Composite => "composite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Sequence-level modules transform the whole staged sequence after all
    /// frame-level effects have been applied.
    pub fn is_sequence_level(self) -> bool {
        matches!(self, Self::NetworkDegradation | Self::FrameDrop)
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scalar, string or list parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ParamValue>),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ParamValue::Bool(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

pub type Parameters = BTreeMap<String, ParamValue>;

/// Declarative description of one perturbation (possibly composite).
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub name: String,
    pub kind: ModuleKind,
    pub parameters: Parameters,
    /// Children of a composite, in application order.
    pub modules: Vec<PerturbationSpec>,
    /// Severity sweep this spec belongs to; specs sharing a group are
    /// reported as levels in listed order.
    pub group: Option<String>,
}

impl PerturbationSpec {
    pub fn new(name: impl Into<String>, kind: ModuleKind) -> Self {
        Self {
            name: name.into(),
            kind,
            parameters: Parameters::new(),
            modules: Vec::new(),
            group: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: ParamValue) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn with_child(mut self, child: PerturbationSpec) -> Self {
        self.modules.push(child);
        self
    }

    pub fn group_name(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.name)
    }

    /// Canonical YAML for this spec, as it appears in a perturbation list.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&raw_perturbation(self)).expect("raw spec always serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DepthProviderConfig {
    /// Depth shipped with the dataset (TUM `depth/`).
    Native,
    /// Directory of per-frame depth files, sorted by name.
    FileDir { path: PathBuf, scale: f64 },
    /// Uniform depth plane.
    Constant { depth_m: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSelector {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub sequence: String,
    pub max_frames: Option<usize>,
    pub load_stereo: bool,
    /// Depth sources consulted in order; defaults to `[Native]`.
    pub depth: Vec<DepthProviderConfig>,
    /// TUM-format reference trajectory; defaults to `groundtruth.txt` in the
    /// sequence directory when present.
    pub ground_truth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConfig {
    pub target_perturbation: String,
    pub parameter: String,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub ate_rmse_fail: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSelector,
    pub perturbations: Vec<PerturbationSpec>,
    pub output_base_dir: PathBuf,
    pub master_seed: u64,
    pub runs: usize,
    pub boundary: Option<BoundaryConfig>,
}

impl ExperimentConfig {
    pub fn perturbation(&self, name: &str) -> Option<&PerturbationSpec> {
        self.perturbations.iter().find(|p| p.name == name)
    }

    /// `<base_dir>/<experiment name>`
    pub fn experiment_dir(&self) -> PathBuf {
        self.output_base_dir.join(&self.name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_experiment_config(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&RawConfig::from(self)).expect("raw config always serializes")
    }
}

// ---------------------------------------------------------------------------
// Raw document
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    experiment: Option<RawExperiment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<RawDataset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbations: Option<Vec<RawPerturbation>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    robustness_boundary: Option<RawBoundary>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<i64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sequence: Option<ScalarString>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_frames: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    load_stereo: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<Vec<RawDepthProvider>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<PathBuf>,
}

/// Accepts `sequence: 07` as well as `sequence: "07"`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarString {
    Str(String),
    Int(i64),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDepthProvider {
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth_m: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parameters: Option<RawParameters>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawParameters {
    #[serde(skip_serializing_if = "Option::is_none")]
    modules: Option<Vec<RawPerturbation>>,
    #[serde(flatten)]
    values: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    base_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    #[serde(skip_serializing_if = "Option::is_none")]
    target_perturbation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parameter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ate_rmse_fail: Option<f64>,
}

fn require<T>(value: Option<T>, path: &str) -> Result<T> {
    value.ok_or_else(|| Error::MissingField(path.to_string()))
}

/// Parse and validate an experiment document.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig =
        serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

    let experiment = require(raw.experiment, "experiment")?;
    let name = require(experiment.name, "experiment.name")?;
    if name.trim().is_empty() {
        return Err(Error::Config("experiment.name must not be empty".into()));
    }
    let runs = experiment.runs.unwrap_or(1);
    if runs < 1 {
        return Err(Error::Config("experiment.runs must be >= 1".into()));
    }

    let ds = require(raw.dataset, "dataset")?;
    let kind_str = require(ds.kind, "dataset.type")?;
    let kind = DatasetKind::parse(&kind_str)
        .ok_or_else(|| Error::Config(format!("dataset.type: unknown dataset type `{kind_str}`")))?;
    let sequence = match require(ds.sequence, "dataset.sequence")? {
        ScalarString::Str(s) => s,
        ScalarString::Int(i) => i.to_string(),
    };
    let max_frames = match ds.max_frames {
        Some(n) if n < 1 => {
            return Err(Error::Config("dataset.max_frames must be >= 1".into()));
        }
        Some(n) => Some(n as usize),
        None => None,
    };
    let depth = match ds.depth {
        None => vec![DepthProviderConfig::Native],
        Some(list) => list
            .into_iter()
            .enumerate()
            .map(|(i, p)| parse_depth_provider(p, i))
            .collect::<Result<_>>()?,
    };
    let dataset = DatasetSelector {
        kind,
        root: ds
            .root
            .unwrap_or_else(|| PathBuf::from("datasets").join(kind.as_str())),
        sequence,
        max_frames,
        load_stereo: ds.load_stereo.unwrap_or(false),
        depth,
        ground_truth: ds.ground_truth,
    };

    let raw_perts = require(raw.perturbations, "perturbations")?;
    let mut perturbations = Vec::with_capacity(raw_perts.len());
    let mut names = HashSet::new();
    for (i, rp) in raw_perts.into_iter().enumerate() {
        let spec = parse_perturbation(rp, &format!("perturbations[{i}]"), None)?;
        let bad_name = spec.name.is_empty()
            || spec.name == "baseline"
            || spec.name.starts_with('.')
            || spec.name.contains(['/', '\\']);
        if bad_name {
            return Err(Error::Config(format!(
                "perturbations[{i}].name: `{}` is not usable as a directory name (or is reserved)",
                spec.name
            )));
        }
        if !names.insert(spec.name.clone()) {
            return Err(Error::Config(format!(
                "perturbations: duplicate name `{}`",
                spec.name
            )));
        }
        perturbations.push(spec);
    }

    let output = require(raw.output, "output")?;
    let output_base_dir = require(output.base_dir, "output.base_dir")?;

    let boundary = raw
        .robustness_boundary
        .map(|b| parse_boundary(b, &perturbations))
        .transpose()?;

    Ok(ExperimentConfig {
        name,
        dataset,
        perturbations,
        output_base_dir,
        master_seed: experiment.master_seed.unwrap_or(0),
        runs: runs as usize,
        boundary,
    })
}

fn parse_depth_provider(raw: RawDepthProvider, index: usize) -> Result<DepthProviderConfig> {
    let path = format!("dataset.depth[{index}]");
    let kind = require(raw.kind, &format!("{path}.kind"))?;
    match kind.as_str() {
        "native" => Ok(DepthProviderConfig::Native),
        "file_dir" => Ok(DepthProviderConfig::FileDir {
            path: require(raw.path, &format!("{path}.path"))?,
            scale: raw.scale.unwrap_or(1.0),
        }),
        "constant" => {
            let depth_m = require(raw.depth_m, &format!("{path}.depth_m"))?;
            if !(depth_m.is_finite() && depth_m > 0.0) {
                return Err(Error::Config(format!("{path}.depth_m must be > 0")));
            }
            Ok(DepthProviderConfig::Constant { depth_m })
        }
        other => Err(Error::Config(format!(
            "{path}.kind: unknown depth provider `{other}` (expected native, file_dir or constant)"
        ))),
    }
}

fn parse_perturbation(
    raw: RawPerturbation,
    path: &str,
    parent: Option<(&str, usize)>,
) -> Result<PerturbationSpec> {
    let kind_str = require(raw.kind, &format!("{path}.type"))?;
    let kind =
        ModuleKind::parse(&kind_str).ok_or(Error::UnknownPerturbationType(kind_str.clone()))?;
    let name = match (raw.name, parent) {
        (Some(n), _) => n,
        (None, Some((_, index))) => format!("{}_{index}", kind.as_str()),
        (None, None) => return Err(Error::MissingField(format!("{path}.name"))),
    };
    let params = raw.parameters.unwrap_or_default();
    let mut modules = Vec::new();
    match (kind, params.modules) {
        (ModuleKind::Composite, Some(children)) => {
            if children.is_empty() {
                return Err(Error::Config(format!(
                    "{path}.parameters.modules: composite needs at least one module"
                )));
            }
            for (i, child) in children.into_iter().enumerate() {
                modules.push(parse_perturbation(
                    child,
                    &format!("{path}.parameters.modules[{i}]"),
                    Some((&name, i)),
                )?);
            }
        }
        (ModuleKind::Composite, None) => {
            return Err(Error::MissingField(format!("{path}.parameters.modules")));
        }
        (_, Some(_)) => {
            return Err(Error::Config(format!(
                "{path}.parameters.modules: only composite perturbations take modules"
            )));
        }
        (_, None) => {}
    }
    if parent.is_some() && raw.group.is_some() {
        return Err(Error::Config(format!("{path}.group: only top-level perturbations take a group")));
    }
    let spec = PerturbationSpec {
        name,
        kind,
        parameters: params.values,
        modules,
        group: raw.group,
    };
    // children were checked when they were parsed
    let own = PerturbationSpec {
        modules: Vec::new(),
        ..spec.clone()
    };
    crate::engine::validate_parameters(&own).map_err(|e| match e {
        Error::InvalidParameter { param, constraint } => Error::InvalidParameter {
            param: format!("{path}.parameters.{param}"),
            constraint,
        },
        e => e,
    })?;
    Ok(spec)
}

fn parse_boundary(raw: RawBoundary, perturbations: &[PerturbationSpec]) -> Result<BoundaryConfig> {
    let p = "robustness_boundary";
    let target = require(raw.target_perturbation, &format!("{p}.target_perturbation"))?;
    if !perturbations.iter().any(|s| s.name == target) {
        return Err(Error::Config(format!(
            "{p}.target_perturbation: `{target}` is not in the perturbations list"
        )));
    }
    let cfg = BoundaryConfig {
        target_perturbation: target,
        parameter: require(raw.parameter, &format!("{p}.parameter"))?,
        lower_bound: require(raw.lower_bound, &format!("{p}.lower_bound"))?,
        upper_bound: require(raw.upper_bound, &format!("{p}.upper_bound"))?,
        tolerance: require(raw.tolerance, &format!("{p}.tolerance"))?,
        max_iters: {
            let n = require(raw.max_iters, &format!("{p}.max_iters"))?;
            if n < 1 {
                return Err(Error::Config(format!("{p}.max_iters must be >= 1")));
            }
            n as usize
        },
        ate_rmse_fail: require(raw.ate_rmse_fail, &format!("{p}.ate_rmse_fail"))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<()> {
        let p = "robustness_boundary";
        if !(self.lower_bound < self.upper_bound) {
            return Err(Error::Config(format!("{p}: lower_bound must be < upper_bound")));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("{p}.tolerance must be > 0")));
        }
        if !(self.ate_rmse_fail > 0.0) {
            return Err(Error::Config(format!("{p}.ate_rmse_fail must be > 0")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Serialization back to the raw document
// ---------------------------------------------------------------------------

impl From<&ExperimentConfig> for RawConfig {
    fn from(cfg: &ExperimentConfig) -> Self {
        RawConfig {
            experiment: Some(RawExperiment {
                name: Some(cfg.name.clone()),
                master_seed: Some(cfg.master_seed),
                runs: Some(cfg.runs as i64),
            }),
            dataset: Some(RawDataset {
                kind: Some(cfg.dataset.kind.as_str().to_string()),
                root: Some(cfg.dataset.root.clone()),
                sequence: Some(ScalarString::Str(cfg.dataset.sequence.clone())),
                max_frames: cfg.dataset.max_frames.map(|n| n as i64),
                load_stereo: Some(cfg.dataset.load_stereo),
                depth: Some(cfg.dataset.depth.iter().map(raw_depth).collect()),
                ground_truth: cfg.dataset.ground_truth.clone(),
            }),
            perturbations: Some(cfg.perturbations.iter().map(raw_perturbation).collect()),
            output: Some(RawOutput {
                base_dir: Some(cfg.output_base_dir.clone()),
            }),
            robustness_boundary: cfg.boundary.as_ref().map(|b| RawBoundary {
                target_perturbation: Some(b.target_perturbation.clone()),
                parameter: Some(b.parameter.clone()),
                lower_bound: Some(b.lower_bound),
                upper_bound: Some(b.upper_bound),
                tolerance: Some(b.tolerance),
                max_iters: Some(b.max_iters as i64),
                ate_rmse_fail: Some(b.ate_rmse_fail),
            }),
        }
    }
}

fn raw_depth(d: &DepthProviderConfig) -> RawDepthProvider {
    match d {
        DepthProviderConfig::Native => RawDepthProvider {
            kind: Some("native".into()),
            ..Default::default()
        },
        DepthProviderConfig::FileDir { path, scale } => RawDepthProvider {
            kind: Some("file_dir".into()),
            path: Some(path.clone()),
            scale: Some(*scale),
            ..Default::default()
        },
        DepthProviderConfig::Constant { depth_m } => RawDepthProvider {
            kind: Some("constant".into()),
            depth_m: Some(*depth_m),
            ..Default::default()
        },
    }
}

fn raw_perturbation(spec: &PerturbationSpec) -> RawPerturbation {
    RawPerturbation {
        name: Some(spec.name.clone()),
        kind: Some(spec.kind.as_str().to_string()),
        group: spec.group.clone(),
        parameters: Some(RawParameters {
            modules: (spec.kind == ModuleKind::Composite)
                .then(|| spec.modules.iter().map(raw_perturbation).collect()),
            values: spec.parameters.clone(),
        }),
    }
}
