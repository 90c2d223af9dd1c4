//! Bandwidth-limited transport: re-encode a whole sequence at a constant
//! bitrate with an external encoder, or approximate the loss of detail with
//! a resolution stub when no encoder is available.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::{self, FilterType};

use crate::config::{ParamValue, Parameters};
use crate::dataset::SequenceManifest;
use crate::error::{Error, Result};
use crate::image::Image;

use super::ParamReader;

/// Environment variable naming the encoder executable.
pub const ENCODER_ENV: &str = "SAL_ENCODER_PATH";
/// Bitrate at which the stub backend leaves frames untouched.
pub const STUB_REFERENCE_BPS: f64 = 8e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    /// External encoder when one is found, stub otherwise.
    Auto,
    External,
    Stub,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportParams {
    pub target_bitrate: String,
    pub max_bitrate: String,
    pub vbv_buffer: String,
    pub codec: String,
    pub preset: String,
    pub backend: Backend,
}

/// Parse `"0.3M"`, `"500k"`, `"2000000"` into bits per second.
pub fn parse_bitrate(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, mult) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 1e3),
        Some('m' | 'M') => (&t[..t.len() - 1], 1e6),
        Some('g' | 'G') => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    match num.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v * mult),
        _ => Err(Error::param("bitrate", format!("`{s}` is not a positive bitrate"))),
    }
}

fn bitrate_string(key: &str, v: &ParamValue) -> Result<String> {
    let s = match v {
        ParamValue::Str(s) => s.clone(),
        ParamValue::Int(i) => i.to_string(),
        ParamValue::Float(f) => f.to_string(),
        _ => return Err(Error::param(key, format!("must be a bitrate, got `{v}`"))),
    };
    parse_bitrate(&s).map_err(|_| Error::param(key, format!("`{s}` is not a positive bitrate")))?;
    Ok(s)
}

impl TransportParams {
    pub const KEYS: &'static [&'static str] =
        &["target_bitrate", "max_bitrate", "vbv_buffer", "codec", "preset", "backend"];

    pub fn new(target: &str, max: &str, vbv: &str) -> Self {
        Self {
            target_bitrate: target.into(),
            max_bitrate: max.into(),
            vbv_buffer: vbv.into(),
            codec: "libx264".into(),
            preset: "medium".into(),
            backend: Backend::Auto,
        }
    }

    pub(crate) fn from_params(params: &Parameters) -> Result<Self> {
        let r = ParamReader::new(params, "network_degradation", Self::KEYS)?;
        let target = bitrate_string(
            "target_bitrate",
            r.get("target_bitrate").ok_or_else(|| Error::param("target_bitrate", "is required"))?,
        )?;
        let max = match r.get("max_bitrate") {
            Some(v) => bitrate_string("max_bitrate", v)?,
            None => target.clone(),
        };
        let vbv = match r.get("vbv_buffer") {
            Some(v) => bitrate_string("vbv_buffer", v)?,
            None => format!("{}", (2.0 * parse_bitrate(&target)?).round() as u64),
        };
        let backend = match r.str_or("backend", "auto")? {
            "auto" => Backend::Auto,
            "external" => Backend::External,
            "stub" => Backend::Stub,
            other => return Err(Error::param("backend", format!("must be auto, external or stub, got `{other}`"))),
        };
        Ok(Self {
            target_bitrate: target,
            max_bitrate: max,
            vbv_buffer: vbv,
            codec: r.str_or("codec", "libx264")?.to_string(),
            preset: r.str_or("preset", "medium")?.to_string(),
            backend,
        })
    }

    pub fn target_bps(&self) -> f64 {
        parse_bitrate(&self.target_bitrate).expect("validated at construction")
    }

    /// Encoder arguments for an image-sequence input.
    pub fn encode_args(&self, frame_rate_hz: f64, input_pattern: &Path, output: &Path) -> Vec<String> {
        [
            "-y", "-hide_banner", "-loglevel", "error", "-framerate",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([
            format!("{frame_rate_hz}"),
            "-i".into(),
            input_pattern.display().to_string(),
            "-vf".into(),
            "pad=ceil(iw/2)*2:ceil(ih/2)*2".into(),
            "-c:v".into(),
            self.codec.clone(),
            "-b:v".into(),
            self.target_bitrate.clone(),
            "-maxrate".into(),
            self.max_bitrate.clone(),
            "-bufsize".into(),
            self.vbv_buffer.clone(),
            "-preset".into(),
            self.preset.clone(),
            "-pix_fmt".into(),
            "yuv420p".into(),
            output.display().to_string(),
        ])
        .collect()
    }

    pub fn decode_args(input: &Path, output_pattern: &Path) -> Vec<String> {
        [
            "-y",
            "-hide_banner",
            "-loglevel",
            "error",
            "-i",
            &input.display().to_string(),
            "-fps_mode",
            "passthrough",
            &output_pattern.display().to_string(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

/// Downscale factor used by the stub backend.
pub fn stub_scale_factor(bitrate_bps: f64) -> f64 {
    (bitrate_bps / STUB_REFERENCE_BPS).sqrt().clamp(0.1, 1.0)
}

pub fn stub_degrade(image: &Image, factor: f64) -> Image {
    if factor >= 1.0 {
        return image.clone();
    }
    let (w, h) = image.dimensions();
    let rgb = image.to_rgb8();
    let sw = ((f64::from(w) * factor).round() as u32).max(1);
    let sh = ((f64::from(h) * factor).round() as u32).max(1);
    let small = imageops::resize(&rgb, sw, sh, FilterType::Triangle);
    Image::from_rgb8(&imageops::resize(&small, w, h, FilterType::Triangle))
}

fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|d| d.join(name))
        .find(|p| p.is_file())
}

/// Encoder executable: `$SAL_ENCODER_PATH`, else `ffmpeg` on `PATH`.
pub fn locate_encoder() -> Option<PathBuf> {
    match std::env::var_os(ENCODER_ENV) {
        Some(p) if !p.is_empty() => Some(PathBuf::from(p)),
        _ => find_on_path("ffmpeg"),
    }
}

fn run_encoder(exe: &Path, args: &[String]) -> Result<()> {
    let out = Command::new(exe)
        .args(args)
        .output()
        .map_err(|e| Error::Encoder(format!("cannot run {}: {e}", exe.display())))?;
    if !out.status.success() {
        return Err(Error::Encoder(format!(
            "{} exited with {}: {}",
            exe.display(),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

/// Re-encode every stream of a materialized sequence in place. Returns run
/// log lines.
pub fn transport_reencode(
    manifest: &SequenceManifest,
    params: &TransportParams,
    scratch: &Path,
) -> Result<Vec<String>> {
    let encoder = match params.backend {
        Backend::Stub => None,
        Backend::External => Some(locate_encoder().ok_or_else(|| {
            Error::Encoder(format!("no encoder found (set {ENCODER_ENV} or install ffmpeg)"))
        })?),
        Backend::Auto => locate_encoder(),
    };
    let seq_dir = manifest.sequence_dir();
    let mut log = Vec::new();
    for (slot, stream) in manifest.streams.iter().enumerate() {
        let paths: Vec<PathBuf> = manifest.frames.iter().map(|f| seq_dir.join(&f.images[slot])).collect();
        let color = manifest.color[slot];
        match &encoder {
            Some(exe) => {
                let work = scratch.join(format!("transport_{stream}"));
                let (input, decoded) = (work.join("in"), work.join("out"));
                for d in [&input, &decoded] {
                    if d.exists() {
                        std::fs::remove_dir_all(d).map_err(|e| Error::io(d, e))?;
                    }
                    std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                }
                let mut dims = Vec::with_capacity(paths.len());
                for (i, p) in paths.iter().enumerate() {
                    let (img, _) = Image::load(p)?;
                    dims.push(img.dimensions());
                    img.save(&input.join(format!("{i:06}.png")), crate::image::ColorType::Rgb)?;
                }
                let video = work.join("stream.mp4");
                run_encoder(exe, &params.encode_args(manifest.frame_rate_hz, &input.join("%06d.png"), &video))?;
                run_encoder(exe, &TransportParams::decode_args(&video, &decoded.join("%06d.png")))?;
                let produced = crate::dataset::list_files(&decoded)?;
                if produced.len() != paths.len() {
                    return Err(Error::Encoder(format!(
                        "decoded {} frames for stream {stream}, expected {}",
                        produced.len(),
                        paths.len()
                    )));
                }
                for ((p, src), (w, h)) in paths.iter().zip(&produced).zip(dims) {
                    let (img, _) = Image::load(src)?;
                    let img = if img.dimensions() == (w, h) {
                        img
                    } else {
                        Image::from_fn(w, h, |x, y| img.get(x.min(img.width() - 1), y.min(img.height() - 1)))
                    };
                    img.save(p, color)?;
                }
                std::fs::remove_dir_all(&work).map_err(|e| Error::io(&work, e))?;
                log.push(format!(
                    "network_degradation: stream {stream} re-encoded with {} ({} -b:v {} -maxrate {} -bufsize {})",
                    exe.display(),
                    params.codec,
                    params.target_bitrate,
                    params.max_bitrate,
                    params.vbv_buffer
                ));
            }
            None => {
                let factor = stub_scale_factor(params.target_bps());
                if factor < 1.0 {
                    for p in &paths {
                        let (img, _) = Image::load(p)?;
                        stub_degrade(&img, factor).save(p, color)?;
                    }
                }
                log.push(format!(
                    "network_degradation: stream {stream} degraded by the built-in stub (scale factor {factor:.4}); \
                     NON-PHYSICAL approximation, no encoder was used"
                ));
            }
        }
    }
    Ok(log)
}
