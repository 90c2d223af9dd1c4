//! Minimal figures rendered both as PNG rasters and as self-contained SVG.
//!
//! Only what the reports need: polylines, filled rectangles, cross markers
//! and (SVG only) text labels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{ColorType, Image};
use crate::raster::for_each_segment_pixel;

pub const PALETTE: [[u8; 3]; 8] = [
    [44, 160, 44],
    [107, 174, 214],
    [254, 217, 118],
    [253, 141, 60],
    [215, 48, 39],
    [117, 107, 177],
    [99, 99, 99],
    [31, 119, 180],
];

#[derive(Clone, Debug)]
enum Shape {
    Line { points: Vec<(f64, f64)>, color: [u8; 3], width: f64 },
    Rect { x: f64, y: f64, w: f64, h: f64, color: [u8; 3] },
    Cross { x: f64, y: f64, size: f64, color: [u8; 3] },
    Text { x: f64, y: f64, text: String, anchor: &'static str },
}

/// A figure in pixel coordinates, origin top-left.
#[derive(Clone, Debug)]
pub struct Figure {
    pub width: u32,
    pub height: u32,
    shapes: Vec<Shape>,
}

fn rgb_css(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            shapes: Vec::new(),
        }
    }

    pub fn line(&mut self, points: Vec<(f64, f64)>, color: [u8; 3], width: f64) {
        self.shapes.push(Shape::Line { points, color, width });
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, color: [u8; 3]) {
        self.shapes.push(Shape::Rect { x, y, w, h, color });
    }

    pub fn cross(&mut self, x: f64, y: f64, size: f64, color: [u8; 3]) {
        self.shapes.push(Shape::Cross { x, y, size, color });
    }

    pub fn text(&mut self, x: f64, y: f64, text: impl Into<String>, anchor: &'static str) {
        self.shapes.push(Shape::Text {
            x,
            y,
            text: text.into(),
            anchor,
        });
    }

    pub fn to_svg(&self) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
            w = self.width,
            h = self.height
        );
        for shape in &self.shapes {
            match shape {
                Shape::Line { points, color, width } => {
                    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"{width}\" points=\"{}\"/>",
                        rgb_css(*color),
                        pts.join(" ")
                    );
                }
                Shape::Rect { x, y, w, h, color } => {
                    let _ = writeln!(
                        s,
                        "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                        rgb_css(*color)
                    );
                }
                Shape::Cross { x, y, size, color } => {
                    let c = rgb_css(*color);
                    let _ = writeln!(
                        s,
                        "<path d=\"M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}\" stroke=\"{c}\" stroke-width=\"2\"/>",
                        x - size,
                        y - size,
                        x + size,
                        y + size,
                        x - size,
                        y + size,
                        x + size,
                        y - size
                    );
                }
                Shape::Text { x, y, text, anchor } => {
                    let _ = writeln!(
                        s,
                        "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"{anchor}\">{}</text>",
                        xml_escape(text)
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }

    /// Raster rendering; text is omitted.
    pub fn to_image(&self) -> Image {
        let mut img = Image::filled(self.width, self.height, [1.0; 3]);
        let (w, h) = (self.width, self.height);
        let stroke = |img: &mut Image, a: (f64, f64), b: (f64, f64), color: [u8; 3], width: f64| {
            let c = color.map(|v| f32::from(v) / 255.0);
            for_each_segment_pixel(w, h, a, b, width, |x, y, cov| {
                let p = img.get(x, y);
                img.set(x, y, [0, 1, 2].map(|k| p[k] + (c[k] - p[k]) * cov));
            });
        };
        for shape in &self.shapes {
            match shape {
                Shape::Line { points, color, width } => {
                    for seg in points.windows(2) {
                        stroke(&mut img, seg[0], seg[1], *color, *width);
                    }
                }
                Shape::Rect { x, y, w: rw, h: rh, color } => {
                    let c = color.map(|v| f32::from(v) / 255.0);
                    let x0 = x.round().max(0.0) as u32;
                    let y0 = y.round().max(0.0) as u32;
                    let x1 = ((x + rw).round().max(0.0) as u32).min(w);
                    let y1 = ((y + rh).round().max(0.0) as u32).min(h);
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            img.set(xx, yy, c);
                        }
                    }
                }
                Shape::Cross { x, y, size, color } => {
                    stroke(&mut img, (x - size, y - size), (x + size, y + size), *color, 2.0);
                    stroke(&mut img, (x - size, y + size), (x + size, y - size), *color, 2.0);
                }
                Shape::Text { .. } => {}
            }
        }
        img
    }

    /// Write `path` (PNG) and its `.svg` sibling. Returns both paths.
    pub fn save(&self, path: &Path) -> Result<Vec<PathBuf>> {
        self.to_image().save(path, ColorType::Rgb)?;
        let svg = path.with_extension("svg");
        std::fs::write(&svg, self.to_svg()).map_err(|e| Error::io(&svg, e))?;
        Ok(vec![path.to_path_buf(), svg])
    }
}

const MARGIN: f64 = 48.0;

/// Maps data coordinates into the plot area, preserving aspect when asked.
struct Frame {
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
    height: f64,
}

impl Frame {
    fn fit(width: u32, height: u32, xs: (f64, f64), ys: (f64, f64), equal_aspect: bool) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            let span = (hi - lo).abs().max(1e-9);
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let (xs, ys) = (pad(xs), pad(ys));
        let (aw, ah) = (f64::from(width) - 2.0 * MARGIN, f64::from(height) - 2.0 * MARGIN);
        let mut sx = aw / (xs.1 - xs.0);
        let mut sy = ah / (ys.1 - ys.0);
        if equal_aspect {
            let s = sx.min(sy);
            sx = s;
            sy = s;
        }
        Self {
            x0: xs.0,
            y0: ys.0,
            sx,
            sy,
            height: f64::from(height),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN + (x - self.x0) * self.sx, self.height - MARGIN - (y - self.y0) * self.sy)
    }
}

fn axes(fig: &mut Figure, title: &str, xlabel: &str, ylabel: &str) {
    let (w, h) = (f64::from(fig.width), f64::from(fig.height));
    let grey = [90, 90, 90];
    fig.line(vec![(MARGIN, MARGIN), (MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN)], grey, 1.0);
    fig.text(w / 2.0, MARGIN / 2.0, title, "middle");
    fig.text(w / 2.0, h - MARGIN / 4.0, xlabel, "middle");
    fig.text(MARGIN / 4.0, MARGIN - 8.0, ylabel, "start");
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

/// Overlaid polylines with equal axis scaling.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Figure {
    let mut fig = Figure::new(640, 480);
    axes(&mut fig, title, xlabel, ylabel);
    let all = series.iter().flat_map(|s| &s.points);
    let (mut xs, mut ys) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for &(x, y) in all {
        xs = (xs.0.min(x), xs.1.max(x));
        ys = (ys.0.min(y), ys.1.max(y));
    }
    if !xs.0.is_finite() {
        return fig;
    }
    let frame = Frame::fit(fig.width, fig.height, xs, ys, true);
    for (k, s) in series.iter().enumerate() {
        fig.line(s.points.iter().map(|&(x, y)| frame.map(x, y)).collect(), s.color, 1.5);
        let ly = MARGIN + 14.0 * k as f64;
        let lx = f64::from(fig.width) - MARGIN - 110.0;
        fig.rect(lx, ly - 6.0, 10.0, 10.0, s.color);
        fig.text(lx + 14.0, ly + 3.0, s.label.clone(), "start");
    }
    fig
}

pub struct Bar {
    pub label: String,
    /// `None` draws a failure cross.
    pub value: Option<f64>,
    pub error: Option<f64>,
    pub color: [u8; 3],
}

pub fn bar_plot(title: &str, ylabel: &str, bars: &[Bar]) -> Figure {
    let width = (160 + 60 * bars.len() as u32).max(320);
    let mut fig = Figure::new(width, 360);
    axes(&mut fig, title, "", ylabel);
    let top = bars
        .iter()
        .filter_map(|b| b.value.map(|v| v + b.error.unwrap_or(0.0)))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let frame = Frame::fit(fig.width, fig.height, (0.0, bars.len() as f64), (0.0, top), false);
    for (i, b) in bars.iter().enumerate() {
        let (x0, base) = frame.map(i as f64 + 0.15, 0.0);
        let (x1, _) = frame.map(i as f64 + 0.85, 0.0);
        match b.value {
            Some(v) => {
                let (_, yt) = frame.map(0.0, v);
                fig.rect(x0, yt, x1 - x0, base - yt, b.color);
                fig.text((x0 + x1) / 2.0, yt - 4.0, format!("{v:.3}"), "middle");
                if let Some(e) = b.error.filter(|e| *e > 0.0) {
                    let xm = (x0 + x1) / 2.0;
                    let (_, lo) = frame.map(0.0, (v - e).max(0.0));
                    let (_, hi) = frame.map(0.0, v + e);
                    fig.line(vec![(xm, lo), (xm, hi)], [0, 0, 0], 1.0);
                }
            }
            None => fig.cross((x0 + x1) / 2.0, base - 10.0, 6.0, [200, 0, 0]),
        }
        fig.text((x0 + x1) / 2.0, base + 14.0, b.label.clone(), "middle");
    }
    fig
}
