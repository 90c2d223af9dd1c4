//! Feature-tracking diagnostics on clean and perturbed sequences.
//!
//! The built-in tracker is intentionally simple: minimum-eigenvalue corners
//! matched frame to frame by normalized cross-correlation of small patches.
//! Tracks end at the first missed match and are never re-identified.
//! Tracks produced elsewhere can be ingested from JSON instead.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_frame, SequenceManifest, Stream};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::delta_percent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Minimum corner score (smallest structure-tensor eigenvalue).
    pub grad_threshold: f64,
    pub nms_radius_px: u32,
    pub max_features: usize,
    /// Odd patch side length.
    pub patch_px: u32,
    pub search_radius_px: f64,
    pub min_ncc: f64,
    /// Forward-backward consistency tolerance.
    pub fb_tolerance_px: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            grad_threshold: 0.005,
            nms_radius_px: 4,
            max_features: 500,
            patch_px: 11,
            search_radius_px: 32.0,
            min_ncc: 0.8,
            fb_tolerance_px: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    pub score: f64,
}

/// Grayscale working copy with luma `0.299 R + 0.587 G + 0.114 B`.
#[derive(Clone, Debug)]
pub struct GrayFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl GrayFrame {
    pub fn from_image(image: &Image) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            data: image.luma(),
        }
    }

    fn at(&self, x: u32, y: u32) -> f64 {
        f64::from(self.data[y as usize * self.width as usize + x as usize])
    }
}

/// Smallest eigenvalue of the 3x3-window gradient structure tensor, per
/// pixel (zero on the 2-pixel border).
pub fn corner_scores(img: &GrayFrame) -> Vec<f64> {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            gx[i] = (img.at(x as u32 + 1, y as u32) - img.at(x as u32 - 1, y as u32)) / 2.0;
            gy[i] = (img.at(x as u32, y as u32 + 1) - img.at(x as u32, y as u32 - 1)) / 2.0;
        }
    }
    let mut score = vec![0.0; w * h];
    for y in 2..h.saturating_sub(2) {
        for x in 2..w.saturating_sub(2) {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    let j = yy * w + xx;
                    a += gx[j] * gx[j];
                    b += gx[j] * gy[j];
                    c += gy[j] * gy[j];
                }
            }
            let tr = (a + c) / 2.0;
            let det_term = (((a - c) / 2.0).powi(2) + b * b).sqrt();
            score[y * w + x] = tr - det_term;
        }
    }
    score
}

fn cmp_strength(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x))
}

/// Corners above `grad_threshold` that are strict local maxima within
/// `nms_radius_px` (ties broken toward the earlier pixel in raster order),
/// strongest first, at most `max_features`.
pub fn detect_features(image: &GrayFrame, params: &TrackerParams) -> Vec<Keypoint> {
    let score = corner_scores(image);
    let (w, h) = (image.width as i64, image.height as i64);
    let r = i64::from(params.nms_radius_px);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = score[(y * w + x) as usize];
            if !(s > params.grad_threshold) {
                continue;
            }
            let mut is_max = true;
            'win: for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    if (xx, yy) == (x, y) {
                        continue;
                    }
                    let o = score[(yy * w + xx) as usize];
                    let earlier = (yy, xx) < (y, x);
                    if o > s || (o == s && earlier) {
                        is_max = false;
                        break 'win;
                    }
                }
            }
            if is_max {
                out.push(Keypoint {
                    x: x as u32,
                    y: y as u32,
                    score: s,
                });
            }
        }
    }
    out.sort_by(cmp_strength);
    out.truncate(params.max_features);
    out
}

/// Zero-mean patch around a keypoint, normalized to unit norm; `None` at
/// the border or for a flat patch.
fn patch(img: &GrayFrame, kp: &Keypoint, side: u32) -> Option<Vec<f64>> {
    let half = side / 2;
    if kp.x < half || kp.y < half || kp.x + half >= img.width || kp.y + half >= img.height {
        return None;
    }
    let mut v = Vec::with_capacity((side * side) as usize);
    for y in kp.y - half..=kp.y + half {
        for x in kp.x - half..=kp.x + half {
            v.push(img.at(x, y));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|p| *p -= mean);
    let norm = v.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    v.iter_mut().for_each(|p| *p /= norm);
    Some(v)
}

/// Keypoints of one frame with their patches; keypoints too close to the
/// border for a full patch, or on flat patches, are dropped.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    patches: Vec<Option<Vec<f64>>>,
}

impl FrameFeatures {
    pub fn extract(img: &GrayFrame, params: &TrackerParams) -> Self {
        let (keypoints, patches) = detect_features(img, params)
            .into_iter()
            .filter_map(|k| patch(img, &k, params.patch_px).map(|p| (k, Some(p))))
            .unzip();
        Self { keypoints, patches }
    }
}

fn best_match(from: &FrameFeatures, i: usize, to: &FrameFeatures, params: &TrackerParams) -> Option<(usize, f64)> {
    let p = from.patches[i].as_ref()?;
    let k = from.keypoints[i];
    let r2 = params.search_radius_px * params.search_radius_px;
    let mut best: Option<(usize, f64)> = None;
    for (j, (kj, pj)) in to.keypoints.iter().zip(&to.patches).enumerate() {
        let Some(pj) = pj else { continue };
        let (dx, dy) = (f64::from(kj.x) - f64::from(k.x), f64::from(kj.y) - f64::from(k.y));
        if dx * dx + dy * dy > r2 {
            continue;
        }
        let ncc: f64 = p.iter().zip(pj).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, b)| ncc > b) {
            best = Some((j, ncc));
        }
    }
    best.filter(|&(_, ncc)| ncc >= params.min_ncc)
}

/// Index pairs `(prev, cur)` of accepted matches.
pub fn match_features(prev: &FrameFeatures, cur: &FrameFeatures, params: &TrackerParams) -> Vec<(usize, usize)> {
    (0..prev.keypoints.len())
        .filter_map(|i| {
            let (j, _) = best_match(prev, i, cur, params)?;
            let (back, _) = best_match(cur, j, prev, params)?;
            let (a, b) = (prev.keypoints[i], prev.keypoints[back]);
            let d = (f64::from(a.x) - f64::from(b.x)).hypot(f64::from(a.y) - f64::from(b.y));
            (d <= params.fb_tolerance_px).then_some((i, j))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub id: usize,
    pub frames: Vec<TrackPoint>,
}

impl FeatureTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl CountStats {
    pub fn from_counts(counts: &[usize]) -> Self {
        if counts.is_empty() {
            return Self {
                mean: 0.0,
                median: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        let mut v: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] },
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingStats {
    pub n_frames: usize,
    pub n_tracks: usize,
    pub mean_track_length: f64,
    pub detections: CountStats,
    pub matches: CountStats,
    pub total_matches: usize,
    /// `(t, fraction of tracks with length >= t)` for `t = 1..=max length`.
    pub survival: Vec<(usize, f64)>,
}

/// Fraction of tracks lasting at least `t` frames, for every `t` up to the
/// longest track.
pub fn survival_curve(lengths: &[usize]) -> Vec<(usize, f64)> {
    let max = lengths.iter().copied().max().unwrap_or(0);
    let n = lengths.len() as f64;
    (1..=max)
        .map(|t| (t, lengths.iter().filter(|&&l| l >= t).count() as f64 / n))
        .collect()
}

/// Statistics from tracks plus per-frame detection and match counts.
pub fn tracking_stats(tracks: &[FeatureTrack], detections: &[usize], matches: &[usize]) -> TrackingStats {
    let lengths: Vec<usize> = tracks.iter().map(FeatureTrack::len).collect();
    let mean = if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    };
    TrackingStats {
        n_frames: detections.len(),
        n_tracks: tracks.len(),
        mean_track_length: mean,
        detections: CountStats::from_counts(detections),
        matches: CountStats::from_counts(matches),
        total_matches: matches.iter().sum(),
        survival: survival_curve(&lengths),
    }
}

/// Chain frame-to-frame matches into tracks.
pub fn track_frames(frames: &[GrayFrame], params: &TrackerParams) -> (Vec<FeatureTrack>, TrackingStats) {
    let feats: Vec<FrameFeatures> = frames.par_iter().map(|f| FrameFeatures::extract(f, params)).collect();
    let pair_matches: Vec<Vec<(usize, usize)>> = feats
        .par_windows(2)
        .map(|w| match_features(&w[0], &w[1], params))
        .collect();

    let mut tracks: Vec<FeatureTrack> = Vec::new();
    // track id per keypoint of the previous frame
    let mut open: Vec<Option<usize>> = Vec::new();
    for (t, f) in feats.iter().enumerate() {
        let mut next: Vec<Option<usize>> = vec![None; f.keypoints.len()];
        if t > 0 {
            for &(i, j) in &pair_matches[t - 1] {
                if let Some(id) = open[i] {
                    next[j] = Some(id);
                }
            }
        }
        for (j, k) in f.keypoints.iter().enumerate() {
            let id = *next[j].get_or_insert_with(|| {
                tracks.push(FeatureTrack {
                    id: tracks.len(),
                    frames: Vec::new(),
                });
                tracks.len() - 1
            });
            tracks[id].frames.push(TrackPoint {
                index: t,
                x: f64::from(k.x),
                y: f64::from(k.y),
            });
        }
        open = next;
    }
    let detections: Vec<usize> = feats.iter().map(|f| f.keypoints.len()).collect();
    let matches: Vec<usize> = pair_matches.iter().map(Vec::len).collect();
    let stats = tracking_stats(&tracks, &detections, &matches);
    (tracks, stats)
}

/// Run the built-in tracker over the reference stream of a sequence.
pub fn run_tracking(manifest: &SequenceManifest, params: &TrackerParams) -> Result<(Vec<FeatureTrack>, TrackingStats)> {
    if manifest.len() < 2 {
        return Err(Error::Dataset("feature tracking needs at least 2 frames".into()));
    }
    let frames = (0..manifest.len())
        .into_par_iter()
        .map(|i| load_frame(manifest, i, Stream::Left).map(|img| GrayFrame::from_image(&img)))
        .collect::<Result<Vec<_>>>()?;
    Ok(track_frames(&frames, params))
}

/// Parse an external tracks file: `[{id, frames: [{index, x, y}]}]`.
pub fn parse_tracks(text: &str) -> Result<Vec<FeatureTrack>> {
    let tracks: Vec<FeatureTrack> =
        serde_json::from_str(text).map_err(|e| Error::Dataset(format!("tracks file: {e}")))?;
    for t in &tracks {
        if t.frames.is_empty() {
            return Err(Error::Dataset(format!("track {} has no frames", t.id)));
        }
        if t.frames.windows(2).any(|w| w[1].index != w[0].index + 1) {
            return Err(Error::Dataset(format!("track {}: frame indices must be consecutive", t.id)));
        }
    }
    Ok(tracks)
}

/// Statistics from externally produced tracks over `n_frames` frames.
pub fn stats_from_tracks(tracks: &[FeatureTrack], n_frames: usize) -> TrackingStats {
    let mut detections = vec![0usize; n_frames];
    let mut matches = vec![0usize; n_frames.saturating_sub(1)];
    for t in tracks {
        for p in &t.frames {
            if p.index < n_frames {
                detections[p.index] += 1;
            }
        }
        for w in t.frames.windows(2) {
            if w[1].index >= 1 && w[1].index - 1 < matches.len() {
                matches[w[1].index - 1] += 1;
            }
        }
    }
    tracking_stats(tracks, &detections, &matches)
}

pub fn load_tracks(path: &Path) -> Result<Vec<FeatureTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTracking {
    pub name: String,
    pub mean_track_length: f64,
    /// No feature was matched at this level.
    pub matching_failure: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingComparison {
    pub clean_mean_track_length: f64,
    pub levels: Vec<LevelTracking>,
    /// Change of mean track length from clean at the most severe level, or
    /// the one below it when the most severe level failed.
    pub delta_percent: Option<f64>,
    pub delta_level: Option<String>,
}

/// Compare clean tracking against levels ordered mild to severe.
pub fn compare_tracking(clean: &TrackingStats, levels: &[(String, TrackingStats)]) -> Result<TrackingComparison> {
    if !(clean.mean_track_length > 0.0) {
        return Err(Error::Metrics("clean mean track length must be > 0".into()));
    }
    let levels: Vec<LevelTracking> = levels
        .iter()
        .map(|(name, s)| LevelTracking {
            name: name.clone(),
            mean_track_length: s.mean_track_length,
            matching_failure: s.total_matches == 0,
        })
        .collect();
    let basis = levels.iter().rev().take(2).find(|l| !l.matching_failure);
    Ok(TrackingComparison {
        clean_mean_track_length: clean.mean_track_length,
        delta_percent: basis.map(|l| delta_percent(clean.mean_track_length, l.mean_track_length)),
        delta_level: basis.map(|l| l.name.clone()),
        levels,
    })
}

/// Survival curve as CSV with header `t,fraction`.
pub fn survival_csv(stats: &TrackingStats) -> String {
    let mut out = String::from("t,fraction\n");
    for (t, f) in &stats.survival {
        out.push_str(&format!("{t},{f}\n"));
    }
    out
}

/// Per-track lengths keyed by id, for reports.
pub fn track_lengths(tracks: &[FeatureTrack]) -> BTreeMap<usize, usize> {
    tracks.iter().map(|t| (t.id, t.len())).collect()
}
