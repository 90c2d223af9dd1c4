//! Frame dropping with metadata rewriting.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::config::Parameters;
use crate::dataset::{write_filtered_metadata, SequenceManifest};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

use super::ParamReader;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DropMode {
    /// Each frame dropped independently with probability `rate_percent / 100`.
    Random { rate_percent: f64 },
    /// Frames with `(i + 1) % period == 0` dropped.
    Periodic { period: usize },
}

impl DropMode {
    pub const KEYS: &'static [&'static str] = &["mode", "drop_rate_percent", "period"];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "frame_drop", Self::KEYS)?;
        match r.str_or("mode", "random")? {
            "random" => Ok(Self::Random {
                rate_percent: r.f64_req("drop_rate_percent")?,
            }),
            "periodic" => Ok(Self::Periodic {
                period: r.usize_or("period", 0)?,
            }),
            other => Err(Error::param("mode", format!("must be random or periodic, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameDropPlan {
    pub mode: DropMode,
    pub n_frames: usize,
    pub seed: u64,
    /// Sorted kept frame indices.
    pub kept: Vec<usize>,
}

impl FrameDropPlan {
    pub fn dropped(&self) -> Vec<usize> {
        let kept: HashSet<usize> = self.kept.iter().copied().collect();
        (0..self.n_frames).filter(|i| !kept.contains(i)).collect()
    }
}

pub fn frame_drop_plan(n_frames: usize, mode: DropMode, seed: u64) -> Result<FrameDropPlan> {
    if n_frames < 2 {
        return Err(Error::param("frame_drop", "needs a sequence of at least 2 frames"));
    }
    let kept: Vec<usize> = match mode {
        DropMode::Random { rate_percent } => {
            if !(0.0..100.0).contains(&rate_percent) {
                return Err(Error::param("drop_rate_percent", "must be in [0, 100)"));
            }
            let p = rate_percent / 100.0;
            let mut rng = rng_from_seed(seed);
            (0..n_frames)
                .filter(|&i| {
                    let drop = rng.random::<f64>() < p;
                    i == 0 || !drop
                })
                .collect()
        }
        DropMode::Periodic { period } => {
            if period < 2 {
                return Err(Error::param("period", "must be >= 2"));
            }
            (0..n_frames).filter(|i| (i + 1) % period != 0).collect()
        }
    };
    if kept.is_empty() {
        return Err(Error::param("frame_drop", "plan would drop every frame"));
    }
    Ok(FrameDropPlan {
        mode,
        n_frames,
        seed,
        kept,
    })
}

/// Materialize the kept frames of `manifest` under `output_root` (a dataset
/// root) with original filenames and rewritten metadata. When
/// `output_root` is the manifest's own root the sequence is filtered in
/// place.
pub fn frame_drop_apply(
    manifest: &SequenceManifest,
    plan: &FrameDropPlan,
    output_root: &Path,
) -> Result<SequenceManifest> {
    if plan.n_frames != manifest.len() {
        return Err(Error::Dataset(format!(
            "drop plan covers {} frames but the sequence has {}",
            plan.n_frames,
            manifest.len()
        )));
    }
    let src_dir = manifest.sequence_dir();
    let dst_dir = output_root.join(&manifest.sequence_rel);
    let in_place = src_dir == dst_dir;
    let kept: HashSet<usize> = plan.kept.iter().copied().collect();
    for (i, frame) in manifest.frames.iter().enumerate() {
        for rel in &frame.images {
            let (src, dst) = (src_dir.join(rel), dst_dir.join(rel));
            match (kept.contains(&i), in_place) {
                (true, false) => {
                    if let Some(parent) = dst.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    }
                    std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
                }
                (false, true) => std::fs::remove_file(&src).map_err(|e| Error::io(&src, e))?,
                _ => {}
            }
        }
    }
    let kept_frames: Vec<_> = plan.kept.iter().map(|&i| manifest.frames[i].clone()).collect();
    write_filtered_metadata(manifest, &kept_frames, &dst_dir)?;

    let mut out = manifest.rebased(output_root);
    out.frames = kept_frames
        .into_iter()
        .enumerate()
        .map(|(i, mut f)| {
            f.index = i;
            f.source_position = i;
            f
        })
        .collect();
    out.source_frame_count = out.frames.len();
    Ok(out)
}
