//! Frame and mask sequence I/O, plus the synthetic beating-heart phantom.
//!
//! On-disk layouts:
//!
//! - frame directory: `meta.json` (`{"t","h","w","ed","es"}` plus an optional
//!   free-form `meta` string map) and `frame_%04d.pgm` binary P5, maxval 255;
//! - mask files `mask_%04d.pgm` holding labels 0..=3 directly;
//! - `.eds` container: `b"EDS1"`, little-endian `u32` T, H, W, ed, es, then
//!   `T·H·W` raw bytes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::{LabelMap, Plane};
use crate::seed;

#[derive(Debug, Error)]
pub enum SeqIoError {
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("sequence too short: {0} frames, need at least 2")]
    TooShort(usize),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SeqIoError + '_ {
    move |source| SeqIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LV: u8 = 1;
pub const LABEL_LVM: u8 = 2;
pub const LABEL_LA: u8 = 3;

/// T grayscale frames with end-diastole / end-systole indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Plane>,
    ed_index: usize,
    es_index: usize,
    pub meta: BTreeMap<String, String>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Plane>, ed_index: usize, es_index: usize) -> Result<Self, SeqIoError> {
        if frames.len() < 2 {
            return Err(SeqIoError::TooShort(frames.len()));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if w == 0 || h == 0 {
            return Err(SeqIoError::Dimension("empty frame".into()));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(SeqIoError::Dimension(format!(
                    "frame {t} is {}x{}, expected {w}x{h}",
                    f.width, f.height
                )));
            }
            if f.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SeqIoError::Format(format!("frame {t} has values outside [0,1]")));
            }
        }
        let t = frames.len();
        if ed_index >= t || es_index >= t {
            return Err(SeqIoError::Format(format!(
                "ed/es indices ({ed_index}, {es_index}) out of range for {t} frames"
            )));
        }
        if ed_index == es_index {
            return Err(SeqIoError::Format(format!("ed and es are both {ed_index}")));
        }
        Ok(Self {
            frames,
            ed_index,
            es_index,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    pub fn frames(&self) -> &[Plane] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn ed_index(&self) -> usize {
        self.ed_index
    }

    pub fn es_index(&self) -> usize {
        self.es_index
    }
}

/// Per-frame label maps (0 background, 1 LV, 2 LVM, 3 LA).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSequence {
    masks: Vec<LabelMap>,
}

impl MaskSequence {
    pub fn new(masks: Vec<LabelMap>) -> Result<Self, SeqIoError> {
        if masks.is_empty() {
            return Err(SeqIoError::TooShort(0));
        }
        let (w, h) = (masks[0].width, masks[0].height);
        for (t, m) in masks.iter().enumerate() {
            if m.width != w || m.height != h {
                return Err(SeqIoError::Dimension(format!(
                    "mask {t} is {}x{}, expected {w}x{h}",
                    m.width, m.height
                )));
            }
            if let Some(bad) = m.data.iter().find(|&&l| l > LABEL_LA) {
                return Err(SeqIoError::Format(format!("mask {t} has label {bad}")));
            }
        }
        Ok(Self { masks })
    }

    pub fn masks(&self) -> &[LabelMap] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn width(&self) -> usize {
        self.masks[0].width
    }

    pub fn height(&self) -> usize {
        self.masks[0].height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetaFile {
    t: usize,
    h: usize,
    w: usize,
    ed: usize,
    es: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

/// Quantizes a `[0,1]` value to a byte, rounding half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:04}.pgm")
}

pub fn mask_file_name(t: usize) -> String {
    format!("mask_{t:04}.pgm")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SeqIoError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| SeqIoError::Format(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary (P5) PGM with maxval ≤ 255; returns `(width, height, maxval, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u8>), SeqIoError> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(SeqIoError::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(SeqIoError::Format(format!("expected P5 magic, found {:?}", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| SeqIoError::Format(format!("bad PGM {what}: {s:?}")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(SeqIoError::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(SeqIoError::Format("missing raster separator".into()));
    }
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(SeqIoError::Format(format!(
            "PGM raster has {} bytes, expected {n}",
            bytes.len() - pos
        )));
    }
    Ok((width, height, maxval as u32, bytes[pos..pos + n].to_vec()))
}

fn read_pgm_frame(path: &Path) -> Result<Plane, SeqIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, maxval, px) = decode_pgm(&bytes)?;
    if maxval != 255 {
        return Err(SeqIoError::Format(format!(
            "{}: frames must use maxval 255, found {maxval}",
            path.display()
        )));
    }
    Ok(Plane::from_vec(w, h, px.into_iter().map(|b| b as f64 / 255.0).collect()))
}

/// Loads a frame directory or a single `.eds` container.
pub fn load_sequence(path: &Path) -> Result<FrameSequence, SeqIoError> {
    if path.is_file() {
        return load_eds(path);
    }
    let meta_path = path.join("meta.json");
    let meta_bytes = fs::read(&meta_path)
        .map_err(|e| SeqIoError::Format(format!("missing {}: {e}", meta_path.display())))?;
    let meta: MetaFile = serde_json::from_slice(&meta_bytes)
        .map_err(|e| SeqIoError::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.t < 2 {
        return Err(SeqIoError::TooShort(meta.t));
    }
    let mut frames = Vec::with_capacity(meta.t);
    for t in 0..meta.t {
        let frame = read_pgm_frame(&path.join(frame_file_name(t)))?;
        if frame.width != meta.w || frame.height != meta.h {
            return Err(SeqIoError::Dimension(format!(
                "frame {t} is {}x{}, meta.json says {}x{}",
                frame.width, frame.height, meta.w, meta.h
            )));
        }
        frames.push(frame);
    }
    Ok(FrameSequence::new(frames, meta.ed, meta.es)?.with_meta(meta.meta))
}

/// Writes `meta.json` and one PGM per frame into `dir` (created if absent).
pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<(), SeqIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = MetaFile {
        t: seq.len(),
        h: seq.height(),
        w: seq.width(),
        ed: seq.ed_index,
        es: seq.es_index,
        meta: seq.meta.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    json.push(b'\n');
    write_atomic(&dir.join("meta.json"), &json)?;
    for (t, frame) in seq.frames.iter().enumerate() {
        let px: Vec<u8> = frame.data.iter().map(|&v| quantize(v)).collect();
        write_atomic(
            &dir.join(frame_file_name(t)),
            &encode_pgm(frame.width, frame.height, &px),
        )?;
    }
    Ok(())
}

const EDS_MAGIC: &[u8; 4] = b"EDS1";

pub fn encode_eds(seq: &FrameSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + seq.len() * seq.width() * seq.height());
    out.extend_from_slice(EDS_MAGIC);
    for v in [seq.len(), seq.height(), seq.width(), seq.ed_index, seq.es_index] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for frame in &seq.frames {
        out.extend(frame.data.iter().map(|&v| quantize(v)));
    }
    out
}

pub fn decode_eds(bytes: &[u8]) -> Result<FrameSequence, SeqIoError> {
    if bytes.len() < 24 || &bytes[..4] != EDS_MAGIC {
        return Err(SeqIoError::Format("not an EDS1 container".into()));
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (t, h, w, ed, es) = (word(0), word(1), word(2), word(3), word(4));
    if t < 2 {
        return Err(SeqIoError::TooShort(t));
    }
    let n = h * w;
    let payload = &bytes[24..];
    if payload.len() != t * n {
        return Err(SeqIoError::Dimension(format!(
            "EDS payload has {} bytes, header implies {}",
            payload.len(),
            t * n
        )));
    }
    let frames = payload
        .chunks_exact(n)
        .map(|c| Plane::from_vec(w, h, c.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect();
    FrameSequence::new(frames, ed, es)
}

pub fn load_eds(path: &Path) -> Result<FrameSequence, SeqIoError> {
    decode_eds(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_eds(seq: &FrameSequence, path: &Path) -> Result<(), SeqIoError> {
    write_atomic(path, &encode_eds(seq))
}

/// Loads `mask_0000.pgm`, `mask_0001.pgm`, … until the first missing index.
pub fn load_masks(dir: &Path) -> Result<MaskSequence, SeqIoError> {
    let mut masks = Vec::new();
    loop {
        let p = dir.join(mask_file_name(masks.len()));
        if !p.exists() {
            break;
        }
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        let (w, h, _, px) = decode_pgm(&bytes)?;
        masks.push(LabelMap::from_vec(w, h, px));
    }
    if masks.is_empty() {
        return Err(SeqIoError::Format(format!("no mask_0000.pgm in {}", dir.display())));
    }
    MaskSequence::new(masks)
}

pub fn save_masks(masks: &MaskSequence, dir: &Path) -> Result<(), SeqIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (t, m) in masks.masks.iter().enumerate() {
        write_atomic(&dir.join(mask_file_name(t)), &encode_pgm(m.width, m.height, &m.data))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Phantom
// ---------------------------------------------------------------------------

/// Vertical over horizontal semi-axis of the LV ellipse.
pub const LV_ASPECT: f64 = 1.25;
/// LA disc radius as a fraction of `base_radius`.
pub const LA_RADIUS_FRACTION: f64 = 0.45;

const GRAY_BLOOD: f64 = 0.2;
const GRAY_WALL: f64 = 0.8;
const GRAY_BACKGROUND: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// Frames per cardiac cycle.
    pub t_count: usize,
    pub height: usize,
    pub width: usize,
    pub cycles: usize,
    /// Horizontal LV semi-axis at end-diastole, pixels.
    pub base_radius: f64,
    pub contraction_fraction: f64,
    pub speckle_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            t_count: 32,
            height: 128,
            width: 128,
            cycles: 1,
            base_radius: 24.0,
            contraction_fraction: 0.3,
            speckle_sigma: 0.02,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn wall_thickness(&self) -> f64 {
        (self.base_radius / 5.0).max(2.0)
    }

    /// LV horizontal semi-axis at frame `t`.
    pub fn radius_at(&self, t: usize) -> f64 {
        let phase = 2.0 * PI * t as f64 / self.t_count as f64;
        self.base_radius * (1.0 - self.contraction_fraction * (1.0 - phase.cos()) / 2.0)
    }

    /// Image center, in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<(), SeqIoError> {
        // t_count = 3 is accepted so the three-frame CLI case is expressible
        if self.t_count < 3 {
            return Err(SeqIoError::Parameter(format!("t_count {} < 3", self.t_count)));
        }
        if self.cycles == 0 {
            return Err(SeqIoError::Parameter("cycles must be ≥ 1".into()));
        }
        if !(0.0..0.9).contains(&self.contraction_fraction) {
            return Err(SeqIoError::Parameter(format!(
                "contraction_fraction {} not in [0, 0.9)",
                self.contraction_fraction
            )));
        }
        if !(self.speckle_sigma >= 0.0) {
            return Err(SeqIoError::Parameter("speckle_sigma must be ≥ 0".into()));
        }
        if !(self.base_radius > 0.0) {
            return Err(SeqIoError::Geometry("base_radius must be > 0".into()));
        }
        let (cx, cy) = self.center();
        let wall = self.wall_thickness();
        let half_w = self.base_radius + wall;
        let top = self.base_radius * LV_ASPECT + wall;
        let bottom = top + 2.0 * LA_RADIUS_FRACTION * self.base_radius;
        if cx - half_w < 0.0 || cy - top < 0.0 || cy + bottom > self.height as f64 - 1.0 {
            return Err(SeqIoError::Geometry(format!(
                "heart of base radius {} does not fit in {}x{}",
                self.base_radius, self.width, self.height
            )));
        }
        Ok(())
    }

    /// `(ed, es)` over the first cycle: ED is the first maximum of the radius,
    /// ES the minimum, ties resolved toward mid-cycle and then the earlier
    /// frame.
    pub fn ed_es(&self) -> (usize, usize) {
        let tol = 1e-12 * self.base_radius.max(1.0);
        let radii: Vec<f64> = (0..self.t_count).map(|t| self.radius_at(t)).collect();
        let mut ed = 0;
        for (t, &r) in radii.iter().enumerate() {
            if r > radii[ed] + tol {
                ed = t;
            }
        }
        let mid = self.t_count as f64 / 2.0;
        let mut es = usize::MAX;
        for (t, &r) in radii.iter().enumerate() {
            if t == ed {
                continue;
            }
            if es == usize::MAX || r < radii[es] - tol {
                es = t;
            } else if (r - radii[es]).abs() <= tol
                && (t as f64 - mid).abs() < (es as f64 - mid).abs()
            {
                es = t;
            }
        }
        (ed, es)
    }
}

#[inline]
fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

/// Signed distance to an axis-aligned ellipse, exact along rays from its center.
fn ellipse_signed_distance(dx: f64, dy: f64, a: f64, b: f64) -> (f64, f64) {
    let q = ((dx / a).powi(2) + (dy / b).powi(2)).sqrt();
    let rho = dx.hypot(dy);
    let sd = if q > 0.0 { rho * (1.0 - 1.0 / q) } else { -a.min(b) };
    (q, sd)
}

/// Renders the phantom: frames with speckle, and noise-free masks.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(FrameSequence, MaskSequence), SeqIoError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = spec.center();
    let wall = spec.wall_thickness();
    let la_r = LA_RADIUS_FRACTION * spec.base_radius;
    let total = spec.t_count * spec.cycles;

    let mut rng = seed::stage_rng(spec.seed, seed::STAGE_PHANTOM);
    let noise = Normal::new(0.0, spec.speckle_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| SeqIoError::Parameter(e.to_string()))?;

    let mut frames = Vec::with_capacity(total);
    let mut masks = Vec::with_capacity(total);
    for t in 0..total {
        let a = spec.radius_at(t);
        let b = a * LV_ASPECT;
        let la_cy = cy + b + wall + la_r;
        let mut frame = Plane::new(w, h);
        let mut mask = LabelMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let (q_in, sd_in) = ellipse_signed_distance(dx, dy, a, b);
                let (q_out, sd_out) = ellipse_signed_distance(dx, dy, a + wall, b + wall);
                let la_d = dx.hypot(y as f64 - la_cy) - la_r;

                let c_in = coverage(sd_in);
                let c_out = coverage(sd_out);
                let c_la = coverage(la_d) * (1.0 - c_out);
                let heart = GRAY_BLOOD * c_in + GRAY_WALL * (c_out - c_in);
                let outside = 1.0 - c_out - c_la;
                let mut g = heart + GRAY_BLOOD * c_la + GRAY_BACKGROUND * outside;
                if spec.speckle_sigma > 0.0 {
                    g += noise.sample(&mut rng);
                }
                frame.set(x, y, g.clamp(0.0, 1.0));

                let label = if q_in <= 1.0 {
                    LABEL_LV
                } else if q_out <= 1.0 {
                    LABEL_LVM
                } else if la_d <= 0.0 {
                    LABEL_LA
                } else {
                    LABEL_BACKGROUND
                };
                mask.set(x, y, label);
            }
        }
        frames.push(frame);
        masks.push(mask);
    }
    let (ed, es) = spec.ed_es();
    let mut meta = BTreeMap::new();
    meta.insert("source".to_string(), "phantom".to_string());
    meta.insert("seed".to_string(), spec.seed.to_string());
    meta.insert("t_count".to_string(), spec.t_count.to_string());
    meta.insert("cycles".to_string(), spec.cycles.to_string());
    let seq = FrameSequence::new(frames, ed, es)?.with_meta(meta);
    Ok((seq, MaskSequence::new(masks)?))
}
