//! Perturbation lifecycle: `instantiate` (setup), `apply_frame` /
//! `apply_sequence` (apply) and `cleanup`.
//!
//! Frame-level effects transform one image at a time and are safe to call
//! concurrently. Sequence-level effects (`network_degradation`,
//! `frame_drop`) transform a materialized sequence after every frame-level
//! effect has run; inside a composite they always execute after the
//! frame-level children, whatever their listed position.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{ModuleKind, ParamValue, Parameters, PerturbationSpec};
use crate::dataset::{CameraIntrinsics, DepthMap, SequenceManifest, Stream};
use crate::effects::crack::{crack_apply, crack_generate, CrackParams, CrackPattern};
use crate::effects::fog::{fog_apply, FogParams};
use crate::effects::frame_drop::{frame_drop_apply, frame_drop_plan, DropMode, FrameDropPlan};
use crate::effects::motion_blur::{motion_blur_apply, MotionBlurParams};
use crate::effects::night::{night_apply, NightParams};
use crate::effects::rain::{rain_apply, RainParams};
use crate::effects::soiling::{soiling_apply, soiling_generate, SoilingOverlay, SoilingParams};
use crate::effects::transport::{transport_reencode, TransportParams};
use crate::effects::{positive, resolve_depth};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::{derive_frame_seed, derive_sequence_seed};

/// What a perturbation sees of the sequence it is about to transform.
#[derive(Clone, Debug)]
pub struct PerturbationContext {
    pub manifest: SequenceManifest,
    /// Per-sequence scratch space for sequence-level work.
    pub scratch_dir: PathBuf,
    pub master_seed: u64,
}

impl PerturbationContext {
    pub fn new(manifest: SequenceManifest, scratch_dir: impl Into<PathBuf>, master_seed: u64) -> Self {
        Self {
            manifest,
            scratch_dir: scratch_dir.into(),
            master_seed,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.manifest.len()
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.manifest.sequence_dir()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamDomain {
    Integer,
    Real,
}

/// A parameter the boundary search may vary.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryParamSpec {
    pub key: &'static str,
    pub domain: ParamDomain,
    pub canonicalize: Option<fn(f64) -> ParamValue>,
}

impl BoundaryParamSpec {
    /// The value handed to the module for a numeric probe.
    pub fn module_value(&self, v: f64) -> ParamValue {
        match (self.canonicalize, self.domain) {
            (Some(f), _) => f(v),
            (None, ParamDomain::Integer) => ParamValue::Int(v as i64),
            (None, ParamDomain::Real) => ParamValue::Float(v),
        }
    }
}

fn megabits(v: f64) -> ParamValue {
    ParamValue::Str(format!("{}M", v as i64))
}

/// Parameters each module lets the boundary search vary.
pub fn searchable_params(kind: ModuleKind) -> BTreeMap<&'static str, BoundaryParamSpec> {
    let spec = |key, domain, canonicalize| (key, BoundaryParamSpec { key, domain, canonicalize });
    let list: Vec<(&'static str, BoundaryParamSpec)> = match kind {
        ModuleKind::Fog => vec![spec("visibility_m", ParamDomain::Integer, None)],
        ModuleKind::Rain => vec![spec("intensity", ParamDomain::Integer, None)],
        ModuleKind::FrameDrop => vec![spec("drop_rate_percent", ParamDomain::Integer, None)],
        ModuleKind::MotionBlur => vec![
            spec("speed_kmh", ParamDomain::Real, None),
            spec("exposure_ms", ParamDomain::Real, None),
        ],
        ModuleKind::NetworkDegradation => {
            vec![spec("target_bitrate", ParamDomain::Integer, Some(megabits as fn(f64) -> ParamValue))]
        }
        _ => Vec::new(),
    };
    list.into_iter().collect()
}

/// Where a boundary parameter lives inside a (possibly composite) spec.
#[derive(Clone, Debug)]
pub struct ParamTarget {
    /// Index of the composite child holding the parameter.
    pub child: Option<usize>,
    pub spec: BoundaryParamSpec,
}

/// Resolve `key` on `spec`. For composites, `key` is either `child.key` or a
/// key declared searchable by exactly one child.
pub fn resolve_boundary_param(spec: &PerturbationSpec, key: &str) -> Result<ParamTarget> {
    let not_searchable = || {
        Error::Config(format!(
            "robustness_boundary.parameter: `{key}` is not a searchable parameter of `{}` ({})",
            spec.name, spec.kind
        ))
    };
    if spec.kind != ModuleKind::Composite {
        let s = *searchable_params(spec.kind).get(key).ok_or_else(not_searchable)?;
        return Ok(ParamTarget { child: None, spec: s });
    }
    if let Some((child_name, child_key)) = key.split_once('.') {
        let idx = spec
            .modules
            .iter()
            .position(|c| c.name == child_name)
            .ok_or_else(not_searchable)?;
        let s = *searchable_params(spec.modules[idx].kind).get(child_key).ok_or_else(not_searchable)?;
        return Ok(ParamTarget { child: Some(idx), spec: s });
    }
    let hits: Vec<(usize, BoundaryParamSpec)> = spec
        .modules
        .iter()
        .enumerate()
        .filter_map(|(i, c)| searchable_params(c.kind).get(key).map(|s| (i, *s)))
        .collect();
    match hits.as_slice() {
        [(i, s)] => Ok(ParamTarget { child: Some(*i), spec: *s }),
        [] => Err(not_searchable()),
        _ => Err(Error::Config(format!(
            "robustness_boundary.parameter: `{key}` is ambiguous in composite `{}`; use `<child>.{key}`",
            spec.name
        ))),
    }
}

/// Copy of `spec` with the single targeted parameter replaced.
pub fn override_param(spec: &PerturbationSpec, target: &ParamTarget, value: ParamValue) -> PerturbationSpec {
    let mut out = spec.clone();
    let holder = match target.child {
        Some(i) => &mut out.modules[i],
        None => &mut out,
    };
    holder.parameters.insert(target.spec.key.to_string(), value);
    out
}

#[derive(Debug)]
enum Effect {
    Fog { params: FogParams, noise_seed: u64 },
    Rain(RainParams),
    Night(NightParams),
    Soiling(Vec<(Stream, SoilingOverlay)>),
    Crack(Vec<(Stream, CrackPattern)>),
    MotionBlur(MotionBlurParams),
    Transport(TransportParams),
    FrameDrop { mode: DropMode, seed: u64, plan: FrameDropPlan },
    Composite(Vec<PerturbationInstance>),
}

/// A set-up perturbation ready to transform frames.
#[derive(Debug)]
pub struct PerturbationInstance {
    name: String,
    kind: ModuleKind,
    parameters: Parameters,
    effect: Effect,
    depth_fallback_m: Option<f64>,
    master_seed: u64,
    calibration: Vec<(Stream, CameraIntrinsics)>,
    scratch_dir: PathBuf,
    notes: Vec<String>,
    active: bool,
}

/// Split off the engine-level `depth_fallback_m` key.
fn take_fallback(params: &Parameters) -> Result<(Parameters, Option<f64>)> {
    let mut rest = params.clone();
    let fallback = match rest.remove("depth_fallback_m") {
        None => None,
        Some(v) => Some(positive(
            "depth_fallback_m",
            v.as_f64().ok_or_else(|| Error::param("depth_fallback_m", "must be a number"))?,
        )?),
    };
    Ok((rest, fallback))
}

/// Check a spec's parameters without a sequence, so config errors surface
/// before any data is read.
pub fn validate_parameters(spec: &PerturbationSpec) -> Result<()> {
    let (params, fallback) = take_fallback(&spec.parameters)?;
    let p = &spec.parameters;
    if fallback.is_some() && !matches!(spec.kind, ModuleKind::Fog | ModuleKind::Rain | ModuleKind::MotionBlur) {
        return Err(Error::param("depth_fallback_m", format!("is not a {} parameter", spec.kind)));
    }
    match spec.kind {
        ModuleKind::Fog => FogParams::from_params(p).map(drop),
        ModuleKind::Rain => RainParams::from_params(p).map(drop),
        ModuleKind::Night => NightParams::from_params(&params).map(drop),
        ModuleKind::MotionBlur => MotionBlurParams::from_params(p).map(drop),
        ModuleKind::LensSoiling => SoilingParams::from_params(&params).map(drop),
        ModuleKind::CrackedLens => CrackParams::from_params(&params).map(drop),
        ModuleKind::NetworkDegradation => TransportParams::from_params(&params).map(drop),
        ModuleKind::FrameDrop => frame_drop_plan(2, DropMode::from_params(&params)?, 0).map(drop),
        ModuleKind::Composite => {
            if let Some(k) = params.keys().next() {
                return Err(Error::param(k.clone(), "is not a composite parameter (only `modules`)"));
            }
            spec.modules.iter().try_for_each(validate_parameters)
        }
    }
}

/// Run module setup for `spec` against `ctx`.
pub fn instantiate(spec: &PerturbationSpec, ctx: &PerturbationContext) -> Result<PerturbationInstance> {
    instantiate_named(spec, ctx, spec.name.clone())
}

fn instantiate_named(spec: &PerturbationSpec, ctx: &PerturbationContext, name: String) -> Result<PerturbationInstance> {
    let seed = ctx.master_seed;
    let calibration: Vec<(Stream, CameraIntrinsics)> = ctx
        .manifest
        .streams
        .iter()
        .copied()
        .zip(ctx.manifest.calibration.iter().cloned())
        .collect();
    let mut notes = Vec::new();
    let (params, depth_fallback_m) = take_fallback(&spec.parameters)?;
    let depth_aware = matches!(spec.kind, ModuleKind::Fog | ModuleKind::Rain | ModuleKind::MotionBlur);
    if depth_fallback_m.is_some() && !depth_aware {
        return Err(Error::param("depth_fallback_m", format!("is not a {} parameter", spec.kind)));
    }
    let p = &spec.parameters;
    let effect = match spec.kind {
        ModuleKind::Fog => Effect::Fog {
            params: FogParams::from_params(p)?,
            noise_seed: derive_sequence_seed(seed, &name, Stream::Left),
        },
        ModuleKind::Rain => Effect::Rain(RainParams::from_params(p)?),
        ModuleKind::Night => Effect::Night(NightParams::from_params(&params)?),
        ModuleKind::MotionBlur => Effect::MotionBlur(MotionBlurParams::from_params(p)?),
        ModuleKind::LensSoiling => {
            let sp = SoilingParams::from_params(&params)?;
            Effect::Soiling(
                calibration
                    .iter()
                    .map(|(s, c)| (*s, soiling_generate(c.width, c.height, &sp, derive_sequence_seed(seed, &name, *s))))
                    .collect(),
            )
        }
        ModuleKind::CrackedLens => {
            let cp = CrackParams::from_params(&params)?;
            Effect::Crack(
                calibration
                    .iter()
                    .map(|(s, c)| (*s, crack_generate(c.width, c.height, &cp, derive_sequence_seed(seed, &name, *s))))
                    .collect(),
            )
        }
        ModuleKind::NetworkDegradation => Effect::Transport(TransportParams::from_params(&params)?),
        ModuleKind::FrameDrop => {
            let mode = DropMode::from_params(&params)?;
            let drop_seed = derive_sequence_seed(seed, &name, Stream::Left);
            Effect::FrameDrop {
                mode,
                seed: drop_seed,
                plan: frame_drop_plan(ctx.total_frames(), mode, drop_seed)?,
            }
        }
        ModuleKind::Composite => {
            if !params.is_empty() {
                let k = params.keys().next().expect("non-empty");
                return Err(Error::param(k.clone(), "is not a composite parameter (only `modules`)"));
            }
            if spec.modules.is_empty() {
                return Err(Error::param("modules", "must list at least one module"));
            }
            let children = spec
                .modules
                .iter()
                .map(|c| instantiate_named(c, ctx, format!("{name}/{}", c.name)))
                .collect::<Result<Vec<_>>>()?;
            let first_frame_level_after_seq = children.iter().enumerate().any(|(i, c)| {
                c.kind.is_sequence_level() && children[i + 1..].iter().any(|d| !d.kind.is_sequence_level())
            });
            if first_frame_level_after_seq {
                let order: Vec<&str> = children
                    .iter()
                    .filter(|c| !c.kind.is_sequence_level())
                    .chain(children.iter().filter(|c| c.kind.is_sequence_level()))
                    .map(|c| c.name.as_str())
                    .collect();
                notes.push(format!(
                    "composite {name}: sequence-level modules run after frame-level modules; effective order: {}",
                    order.join(" -> ")
                ));
            }
            for c in &children {
                notes.extend(c.notes.iter().cloned());
            }
            Effect::Composite(children)
        }
    };
    Ok(PerturbationInstance {
        name,
        kind: spec.kind,
        parameters: spec.parameters.clone(),
        effect,
        depth_fallback_m,
        master_seed: seed,
        calibration,
        scratch_dir: ctx.scratch_dir.clone(),
        notes,
        active: true,
    })
}

impl PerturbationInstance {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ModuleKind {
        self.kind
    }

    pub fn parameters(&self) -> &Parameters {
        &self.parameters
    }

    /// Setup-time notes for the run log.
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn children(&self) -> &[PerturbationInstance] {
        match &self.effect {
            Effect::Composite(c) => c,
            _ => &[],
        }
    }

    pub fn fog_params(&self) -> Option<&FogParams> {
        match &self.effect {
            Effect::Fog { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn soiling_overlay(&self, stream: Stream) -> Option<&SoilingOverlay> {
        match &self.effect {
            Effect::Soiling(v) => v.iter().find(|(s, _)| *s == stream).map(|(_, o)| o),
            _ => None,
        }
    }

    pub fn crack_pattern(&self, stream: Stream) -> Option<&CrackPattern> {
        match &self.effect {
            Effect::Crack(v) => v.iter().find(|(s, _)| *s == stream).map(|(_, o)| o),
            _ => None,
        }
    }

    pub fn drop_plan(&self) -> Option<&FrameDropPlan> {
        match &self.effect {
            Effect::FrameDrop { plan, .. } => Some(plan),
            _ => None,
        }
    }

    /// True when this instance or any child has a sequence-level stage.
    pub fn has_sequence_stage(&self) -> bool {
        match &self.effect {
            Effect::Composite(c) => c.iter().any(|c| c.has_sequence_stage()),
            _ => self.kind.is_sequence_level(),
        }
    }

    /// True when some frame-level effect needs depth.
    pub fn needs_depth(&self) -> bool {
        match &self.effect {
            Effect::Composite(c) => c.iter().any(|c| c.needs_depth()),
            Effect::Fog { .. } | Effect::Rain(_) | Effect::MotionBlur(_) => true,
            _ => false,
        }
    }

    fn check_active(&self) -> Result<()> {
        if self.active {
            Ok(())
        } else {
            Err(Error::Lifecycle(format!("`{}` used after cleanup", self.name)))
        }
    }

    fn intrinsics(&self, stream: Stream) -> Result<&CameraIntrinsics> {
        self.calibration
            .iter()
            .find(|(s, _)| *s == stream)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Dataset(format!("stream {stream} not declared by this sequence")))
    }

    /// Transform one frame. Sequence-level effects pass frames through.
    pub fn apply_frame(
        &self,
        image: &Image,
        depth: Option<&DepthMap>,
        frame_index: usize,
        stream: Stream,
    ) -> Result<Image> {
        self.check_active()?;
        let cal = self.intrinsics(stream)?;
        if image.dimensions() != (cal.width, cal.height) {
            return Err(Error::DimensionMismatch {
                expected: (cal.width, cal.height),
                actual: image.dimensions(),
            });
        }
        let dense = || resolve_depth(depth, self.depth_fallback_m, cal.width, cal.height, &self.name);
        let frame_seed = || derive_frame_seed(self.master_seed, &self.name, frame_index as u64, stream);
        match &self.effect {
            Effect::Fog { params, noise_seed } => Ok(fog_apply(image, &dense()?, params, *noise_seed)),
            Effect::Rain(p) => Ok(rain_apply(image, &dense()?, p, frame_seed(), cal)),
            Effect::Night(p) => Ok(night_apply(image, p, frame_seed())),
            Effect::MotionBlur(p) => Ok(motion_blur_apply(image, &dense()?, p, cal)),
            Effect::Soiling(v) => {
                let o = v.iter().find(|(s, _)| *s == stream).map(|(_, o)| o).expect("overlay per stream");
                soiling_apply(image, o)
            }
            Effect::Crack(v) => {
                let p = v.iter().find(|(s, _)| *s == stream).map(|(_, o)| o).expect("pattern per stream");
                crack_apply(image, p)
            }
            Effect::Transport(_) | Effect::FrameDrop { .. } => Ok(image.clone()),
            Effect::Composite(children) => {
                let mut cur = image.clone();
                for c in children.iter().filter(|c| !c.kind.is_sequence_level()) {
                    cur = c.apply_frame(&cur, depth, frame_index, stream)?;
                }
                Ok(cur)
            }
        }
    }

    /// Run sequence-level stages on a materialized sequence, in place.
    /// Returns the resulting manifest and run-log lines.
    pub fn apply_sequence(&self, staged: &SequenceManifest) -> Result<(SequenceManifest, Vec<String>)> {
        self.check_active()?;
        match &self.effect {
            Effect::Transport(p) => {
                let scratch = self.scratch_dir.join(self.name.replace('/', "__"));
                let log = transport_reencode(staged, p, &scratch)?;
                Ok((staged.clone(), log))
            }
            Effect::FrameDrop { mode, seed, plan } => {
                let plan = if plan.n_frames == staged.len() {
                    plan.clone()
                } else {
                    frame_drop_plan(staged.len(), *mode, *seed)?
                };
                let out = frame_drop_apply(staged, &plan, &staged.dataset_root)?;
                let log = vec![format!(
                    "{}: kept {} of {} frames",
                    self.name,
                    plan.kept.len(),
                    plan.n_frames
                )];
                Ok((out, log))
            }
            Effect::Composite(children) => {
                let mut cur = staged.clone();
                let mut log = Vec::new();
                for c in children.iter().filter(|c| c.kind.is_sequence_level()) {
                    let (next, l) = c.apply_sequence(&cur)?;
                    cur = next;
                    log.extend(l);
                }
                Ok((cur, log))
            }
            _ => Ok((staged.clone(), Vec::new())),
        }
    }

    /// Release per-sequence state; further applies fail.
    pub fn cleanup(&mut self) {
        if let Effect::Composite(children) = &mut self.effect {
            children.iter_mut().for_each(PerturbationInstance::cleanup);
        }
        match &mut self.effect {
            Effect::Soiling(v) => v.clear(),
            Effect::Crack(v) => v.clear(),
            _ => {}
        }
        self.active = false;
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn scratch_dir(&self) -> &Path {
        &self.scratch_dir
    }
}
