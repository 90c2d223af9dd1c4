//! Cracked lens: fracture simulated on a graph of random points.
//!
//! Stress decays from the impact point as `F / (1 + (d / r0)^2)` with
//! `r0 = 0.35 * diagonal`. Points whose stress exceeds the break threshold
//! fracture: each connects to its three nearest fractured neighbours
//! (primary cracks) and a minimum spanning tree over all fractured points
//! adds secondary cracks. Lines are blended toward white and the glass
//! around them is blurred.

use rand::Rng;

use crate::config::Parameters;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{distance_to_segment, gaussian_blur, Plane};
use crate::seed::rng_from_seed;

use super::{positive, unit_interval, ParamReader};

#[derive(Clone, Debug, PartialEq)]
pub struct CrackParams {
    pub impact_force: f64,
    pub break_threshold: f64,
    pub n_points: usize,
    pub neighbors: usize,
    pub line_width_px: f64,
    pub line_alpha: f64,
    pub blur_sigma_px: f64,
    pub blur_radius_px: f64,
}

impl Default for CrackParams {
    fn default() -> Self {
        Self {
            impact_force: 600.0,
            break_threshold: 250.0,
            n_points: 120,
            neighbors: 3,
            line_width_px: 1.5,
            line_alpha: 0.8,
            blur_sigma_px: 2.0,
            blur_radius_px: 6.0,
        }
    }
}

/// Stress radius as a fraction of the image diagonal.
pub const STRESS_RADIUS_FRACTION: f64 = 0.35;

impl CrackParams {
    pub const KEYS: &'static [&'static str] = &[
        "impact_force",
        "break_threshold",
        "n_points",
        "neighbors",
        "line_width_px",
        "line_alpha",
        "blur_sigma_px",
        "blur_radius_px",
    ];

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "cracked_lens", Self::KEYS)?;
        let d = Self::default();
        Ok(Self {
            impact_force: positive("impact_force", r.f64_or("impact_force", d.impact_force)?)?,
            break_threshold: positive("break_threshold", r.f64_or("break_threshold", d.break_threshold)?)?,
            n_points: r.usize_or("n_points", d.n_points)?,
            neighbors: r.usize_or("neighbors", d.neighbors)?,
            line_width_px: positive("line_width_px", r.f64_or("line_width_px", d.line_width_px)?)?,
            line_alpha: unit_interval("line_alpha", r.f64_or("line_alpha", d.line_alpha)?)?,
            blur_sigma_px: positive("blur_sigma_px", r.f64_or("blur_sigma_px", d.blur_sigma_px)?)?,
            blur_radius_px: positive("blur_radius_px", r.f64_or("blur_radius_px", d.blur_radius_px)?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrackPattern {
    pub width: u32,
    pub height: u32,
    /// Sampled points followed by the impact point (last).
    pub points: Vec<(f64, f64)>,
    pub stress: Vec<f64>,
    pub primary: Vec<(usize, usize)>,
    pub secondary: Vec<(usize, usize)>,
    /// Line coverage times blend alpha, per pixel.
    pub line_alpha: Vec<f32>,
    pub blur_mask: Vec<bool>,
    pub blur_sigma_px: f64,
}

impl CrackPattern {
    pub fn impact(&self) -> (f64, f64) {
        *self.points.last().expect("impact point present")
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty() && self.secondary.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.primary
            .iter()
            .chain(&self.secondary)
            .map(|&(a, b)| (self.points[a], self.points[b]))
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Prim's algorithm over the complete Euclidean graph of `nodes`.
fn minimum_spanning_tree(points: &[(f64, f64)], nodes: &[usize]) -> Vec<(usize, usize)> {
    if nodes.len() < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; nodes.len()];
    let mut best = vec![(f64::INFINITY, 0usize); nodes.len()];
    in_tree[0] = true;
    for j in 1..nodes.len() {
        best[j] = (dist(points[nodes[0]], points[nodes[j]]), 0);
    }
    let mut edges = Vec::with_capacity(nodes.len() - 1);
    for _ in 1..nodes.len() {
        let (next, _) = best
            .iter()
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .expect("a node remains outside the tree");
        in_tree[next] = true;
        let (a, b) = (nodes[best[next].1], nodes[next]);
        edges.push((a.min(b), a.max(b)));
        for j in 0..nodes.len() {
            if !in_tree[j] {
                let d = dist(points[nodes[next]], points[nodes[j]]);
                if d < best[j].0 {
                    best[j] = (d, next);
                }
            }
        }
    }
    edges
}

pub fn crack_generate(width: u32, height: u32, params: &CrackParams, seed: u64) -> CrackPattern {
    let mut rng = rng_from_seed(seed);
    let (w, h) = (f64::from(width), f64::from(height));
    let mut points: Vec<(f64, f64)> = (0..params.n_points)
        .map(|_| (rng.random::<f64>() * w, rng.random::<f64>() * h))
        .collect();
    // impact lands in the central half of the lens
    let impact = (w * (0.25 + 0.5 * rng.random::<f64>()), h * (0.25 + 0.5 * rng.random::<f64>()));
    points.push(impact);

    let r0 = STRESS_RADIUS_FRACTION * (w * w + h * h).sqrt();
    let stress: Vec<f64> = points
        .iter()
        .map(|&p| params.impact_force / (1.0 + (dist(p, impact) / r0).powi(2)))
        .collect();
    let stressed: Vec<usize> = (0..points.len()).filter(|&i| stress[i] > params.break_threshold).collect();

    let mut primary = Vec::new();
    for &i in &stressed {
        let mut near: Vec<usize> = stressed.iter().copied().filter(|&j| j != i).collect();
        near.sort_by(|&a, &b| dist(points[i], points[a]).total_cmp(&dist(points[i], points[b])).then(a.cmp(&b)));
        for &j in near.iter().take(params.neighbors) {
            let edge = (i.min(j), i.max(j));
            if (stress[i] + stress[j]) / 2.0 > params.break_threshold && !primary.contains(&edge) {
                primary.push(edge);
            }
        }
    }
    let secondary = minimum_spanning_tree(&points, &stressed);

    let mut lines = Plane::new(width, height);
    for &(a, b) in &primary {
        lines.draw_segment_max(points[a], points[b], params.line_width_px, params.line_alpha as f32);
    }
    for &(a, b) in &secondary {
        lines.draw_segment_max(points[a], points[b], params.line_width_px * 0.66, params.line_alpha as f32);
    }

    let mut blur_mask = vec![false; width as usize * height as usize];
    let reach = params.blur_radius_px;
    for &(a, b) in primary.iter().chain(&secondary) {
        let (pa, pb) = (points[a], points[b]);
        let x0 = (pa.0.min(pb.0) - reach).floor().max(0.0) as u32;
        let x1 = ((pa.0.max(pb.0) + reach).ceil().max(0.0) as u32).min(width.saturating_sub(1));
        let y0 = (pa.1.min(pb.1) - reach).floor().max(0.0) as u32;
        let y1 = ((pa.1.max(pb.1) + reach).ceil().max(0.0) as u32).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if distance_to_segment((f64::from(x), f64::from(y)), pa, pb) <= reach {
                    blur_mask[y as usize * width as usize + x as usize] = true;
                }
            }
        }
    }

    CrackPattern {
        width,
        height,
        points,
        stress,
        primary,
        secondary,
        line_alpha: lines.data,
        blur_mask,
        blur_sigma_px: params.blur_sigma_px,
    }
}

pub fn crack_apply(image: &Image, pattern: &CrackPattern) -> Result<Image> {
    if image.dimensions() != (pattern.width, pattern.height) {
        return Err(Error::DimensionMismatch {
            expected: (pattern.width, pattern.height),
            actual: image.dimensions(),
        });
    }
    if pattern.is_empty() {
        return Ok(image.clone());
    }
    let mut lined = image.clone();
    for (px, &a) in lined.data_mut().chunks_exact_mut(3).zip(&pattern.line_alpha) {
        if a > 0.0 {
            for c in px.iter_mut() {
                *c += (1.0 - *c) * a;
            }
        }
    }
    let blurred = gaussian_blur(lined.data(), pattern.width, pattern.height, 3, pattern.blur_sigma_px);
    let mut out = image.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        if pattern.blur_mask[i] {
            for c in 0..3 {
                px[c] = blurred[i * 3 + c].clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_impact_leaves_glass_intact() {
        let p = CrackParams {
            impact_force: 300.0,
            break_threshold: 400.0,
            ..CrackParams::default()
        };
        let pat = crack_generate(64, 48, &p, 5);
        assert!(pat.is_empty());
        let img = Image::filled(64, 48, [0.4; 3]);
        assert_eq!(crack_apply(&img, &pat).unwrap(), img);
    }

    #[test]
    fn severe_impact_fractures_along_stressed_edges() {
        let p = CrackParams::default();
        let pat = crack_generate(320, 240, &p, 5);
        assert!(!pat.secondary.is_empty());
        for &(a, b) in pat.primary.iter().chain(&pat.secondary) {
            assert!(pat.stress[a] > p.break_threshold && pat.stress[b] > p.break_threshold);
        }
        let stressed = pat.stress.iter().filter(|s| **s > p.break_threshold).count();
        assert_eq!(pat.secondary.len(), stressed - 1);
    }

    #[test]
    fn mst_of_square() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)];
        let e = minimum_spanning_tree(&pts, &[0, 1, 2, 3, 4]);
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|&(a, b)| a == 4 || b == 4));
    }
}
