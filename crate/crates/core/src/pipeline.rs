//! Dataset-to-dataset transformation: perturbed copies of a sequence under
//! `<base>/<experiment>/perturbed/<name>/`, mirroring the source layout.
//!
//! Each output carries a `.sal/` directory with the run log and a
//! fingerprint of inputs and outputs, so reruns skip outputs that are
//! already up to date.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::config::{ExperimentConfig, PerturbationSpec};
use crate::dataset::{load_frame, write_filtered_metadata, DepthChain, SequenceManifest, Stream};
use crate::engine::{instantiate, PerturbationContext};
use crate::error::{Error, Result};

/// Bookkeeping directory inside every perturbed output.
pub const STATE_DIR: &str = ".sal";

#[derive(Clone, Copy, Debug, Default)]
pub struct PipelineOptions {
    /// Regenerate outputs even when their fingerprint matches.
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputStatus {
    Generated,
    UpToDate,
}

/// One perturbed copy of the source sequence.
#[derive(Clone, Debug)]
pub struct PerturbedSequence {
    pub name: String,
    /// Dataset root of the copy.
    pub root: PathBuf,
    pub manifest: SequenceManifest,
    pub status: OutputStatus,
    pub log: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Fingerprint {
    input: String,
    output: String,
    manifest: SequenceManifest,
}

pub fn perturbed_root(experiment_dir: &Path, name: &str) -> PathBuf {
    experiment_dir.join("perturbed").join(name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Hash of everything that determines an output: spec, seed, depth
/// sources and source file contents.
fn input_fingerprint(spec: &PerturbationSpec, manifest: &SequenceManifest, depth: &DepthChain, seed: u64) -> Result<String> {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION"));
    h.update(spec.to_yaml());
    h.update(seed.to_le_bytes());
    h.update(format!("{depth:?}"));
    h.update(serde_json::to_vec(&manifest.frames)?);
    let dir = manifest.sequence_dir();
    for f in &manifest.frames {
        for rel in f.images.iter().chain(&f.depth) {
            hash_file(&mut h, &dir.join(rel))?;
        }
    }
    for rel in manifest.sidecar_files.iter().chain(manifest.metadata_files.iter().map(|m| &m.path)) {
        hash_file(&mut h, &dir.join(rel))?;
    }
    Ok(hex(&h.finalize()))
}

/// Hash of every file under `root` outside the state directory.
fn output_fingerprint(root: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.file_name() != STATE_DIR);
    for entry in walker {
        let entry = entry.map_err(|e| Error::Dataset(format!("cannot walk {}: {e}", root.display())))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("walk stays under root");
            h.update(rel.to_string_lossy().as_bytes());
            hash_file(&mut h, entry.path())?;
        }
    }
    Ok(hex(&h.finalize()))
}

fn read_fingerprint(root: &Path) -> Option<Fingerprint> {
    let text = std::fs::read_to_string(root.join(STATE_DIR).join("fingerprint.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn copy_into(src_dir: &Path, dst_dir: &Path, rel: &Path) -> Result<()> {
    let (src, dst) = (src_dir.join(rel), dst_dir.join(rel));
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
    Ok(())
}

/// True when `root` holds an output matching `input` whose files are intact.
fn up_to_date(root: &Path, input: &str) -> Option<SequenceManifest> {
    let fp = read_fingerprint(root)?;
    (fp.input == input && output_fingerprint(root).ok()? == fp.output).then_some(fp.manifest)
}

/// Write one perturbed copy of `manifest` with dataset root `out_root`.
pub fn perturb_sequence(
    spec: &PerturbationSpec,
    manifest: &SequenceManifest,
    depth: &DepthChain,
    out_root: &Path,
    master_seed: u64,
    opts: PipelineOptions,
) -> Result<PerturbedSequence> {
    let input = input_fingerprint(spec, manifest, depth, master_seed)?;
    if !opts.force {
        if let Some(m) = up_to_date(out_root, &input) {
            return Ok(PerturbedSequence {
                name: spec.name.clone(),
                root: out_root.to_path_buf(),
                manifest: m,
                status: OutputStatus::UpToDate,
                log: vec![format!("{}: up-to-date", spec.name)],
            });
        }
    }
    if out_root.exists() {
        std::fs::remove_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    }
    let state = out_root.join(STATE_DIR);
    std::fs::create_dir_all(&state).map_err(|e| Error::io(&state, e))?;

    let ctx = PerturbationContext::new(manifest.clone(), state.join("scratch"), master_seed);
    let mut instance = instantiate(spec, &ctx)?;
    let mut log: Vec<String> = instance.notes().to_vec();

    let src_dir = manifest.sequence_dir();
    let dst_dir = out_root.join(&manifest.sequence_rel);
    let parents: BTreeSet<PathBuf> = manifest
        .frames
        .iter()
        .flat_map(|f| &f.images)
        .filter_map(|rel| dst_dir.join(rel).parent().map(Path::to_path_buf))
        .collect();
    for p in &parents {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    let needs_depth = instance.needs_depth();
    (0..manifest.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let frame_depth = if needs_depth { depth.load(manifest, i, Stream::Left)? } else { None };
        for (slot, &stream) in manifest.streams.iter().enumerate() {
            let img = load_frame(manifest, i, stream)?;
            let out = instance.apply_frame(&img, frame_depth.as_ref(), i, stream)?;
            out.save(&dst_dir.join(&manifest.frames[i].images[slot]), manifest.color[slot])?;
        }
        Ok(())
    })?;

    for f in &manifest.frames {
        if let Some(rel) = &f.depth {
            copy_into(&src_dir, &dst_dir, rel)?;
        }
    }
    for rel in &manifest.sidecar_files {
        copy_into(&src_dir, &dst_dir, rel)?;
    }
    if let Some(rel) = manifest.ground_truth.as_ref().and_then(|g| g.strip_prefix(&src_dir).ok()) {
        if !manifest.sidecar_files.iter().any(|s| s == rel) {
            copy_into(&src_dir, &dst_dir, rel)?;
        }
    }
    write_filtered_metadata(manifest, &manifest.frames, &dst_dir)?;
    log.push(format!(
        "{}: {} frames x {} stream(s) written to {}",
        spec.name,
        manifest.len(),
        manifest.streams.len(),
        dst_dir.display()
    ));

    let mut result = manifest.rebased(out_root);
    if instance.has_sequence_stage() {
        let (m, l) = instance.apply_sequence(&result)?;
        result = m;
        log.extend(l);
    }
    instance.cleanup();
    let scratch = state.join("scratch");
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    }

    let fp = Fingerprint {
        input,
        output: output_fingerprint(out_root)?,
        manifest: result.clone(),
    };
    let fp_path = state.join("fingerprint.json");
    std::fs::write(&fp_path, serde_json::to_string_pretty(&fp)?).map_err(|e| Error::io(&fp_path, e))?;
    let log_path = state.join("run.log");
    std::fs::write(&log_path, log.join("\n") + "\n").map_err(|e| Error::io(&log_path, e))?;
    for line in &log {
        log::info!("{line}");
    }
    Ok(PerturbedSequence {
        name: spec.name.clone(),
        root: out_root.to_path_buf(),
        manifest: result,
        status: OutputStatus::Generated,
        log,
    })
}

/// The current output of `spec` under `out_root`, without regenerating it.
/// `None` when it is missing, stale or damaged.
pub fn existing_output(
    spec: &PerturbationSpec,
    manifest: &SequenceManifest,
    depth: &DepthChain,
    out_root: &Path,
    master_seed: u64,
) -> Result<Option<SequenceManifest>> {
    let input = input_fingerprint(spec, manifest, depth, master_seed)?;
    Ok(up_to_date(out_root, &input))
}

/// [`existing_output`] for every spec of `config`, in listed order.
pub fn existing_outputs(config: &ExperimentConfig, manifest: &SequenceManifest) -> Result<Vec<(String, Option<SequenceManifest>)>> {
    let depth = DepthChain::from_config(&config.dataset.depth, manifest)?;
    let base = config.experiment_dir();
    config
        .perturbations
        .iter()
        .map(|spec| {
            let m = existing_output(spec, manifest, &depth, &perturbed_root(&base, &spec.name), config.master_seed)?;
            Ok((spec.name.clone(), m))
        })
        .collect()
}

/// Perturb `manifest` with every spec of `config`, in listed order.
pub fn run_perturbation_pipeline(
    config: &ExperimentConfig,
    manifest: &SequenceManifest,
    opts: PipelineOptions,
) -> Result<Vec<PerturbedSequence>> {
    let depth = DepthChain::from_config(&config.dataset.depth, manifest)?;
    let base = config.experiment_dir();
    config
        .perturbations
        .iter()
        .map(|spec| perturb_sequence(spec, manifest, &depth, &perturbed_root(&base, &spec.name), config.master_seed, opts))
        .collect()
}

/// Actions `run_perturbation_pipeline` would take, one line each.
pub fn plan_perturbation(config: &ExperimentConfig, manifest: &SequenceManifest) -> Vec<String> {
    let base = config.experiment_dir();
    config
        .perturbations
        .iter()
        .map(|spec| {
            let root = perturbed_root(&base, &spec.name);
            let stage = if spec.kind.is_sequence_level() || spec.modules.iter().any(|c| c.kind.is_sequence_level()) {
                " (+ sequence-level stage)"
            } else {
                ""
            };
            format!(
                "perturb {} [{}]: {} frames x {} stream(s) -> {}{stage}",
                spec.name,
                spec.kind,
                manifest.len(),
                manifest.streams.len(),
                root.join(&manifest.sequence_rel).display()
            )
        })
        .collect()
}
