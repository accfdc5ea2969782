//! Forward pass of the phase/dynamics attention block.
//!
//! Per frame, the pooled channel vector, an MLP encoding of the cardiac phase
//! (as `sin 2πφ, cos 2πφ`) and an MLP encoding of the dynamic feature are
//! concatenated into one token. Tokens attend to each other across time; a
//! sigmoid gate on the attention output yields a per-frame, per-channel
//! factor `S` that modulates the clip as `X ⊙ (1 + α(2S − 1))`. The result
//! is blended half-and-half with a zero-padded 3×3×3 convolution of itself.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum CpdaError {
    #[error("shape mismatch: {0}")]
    Model(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("ed and es coincide at frame {0}; phase is undefined")]
    DegeneratePhase(usize),
    #[error("phase index out of range: {0}")]
    Parameter(String),
    #[error("clip file: {0}")]
    Format(String),
}

/// Stacked skip features, `T × H × W × C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
    /// Encoder level this clip came from.
    pub level: u8,
}

impl FeatureClip {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            t,
            h,
            w,
            c,
            data: vec![0.0; t * h * w * c],
            level: 1,
        }
    }

    pub fn from_vec(t: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, CpdaError> {
        if data.len() != t * h * w * c {
            return Err(CpdaError::Model(format!(
                "clip data has {} values, {t}x{h}x{w}x{c} needs {}",
                data.len(),
                t * h * w * c
            )));
        }
        Ok(Self {
            t,
            h,
            w,
            c,
            data,
            level: 1,
        })
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, ch: usize) -> usize {
        ((t * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.index(t, y, x, ch)]
    }
}

/// Cardiac phase per frame, in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrack {
    pub phi: Vec<f64>,
}

/// Linear phase with `φ(ed) = 0`, `φ(es) = 0.5` and a cycle of
/// `2·|es − ed|` frames, wrapped into `[0, 1)`.
pub fn phase_track(t: usize, ed: usize, es: usize) -> Result<PhaseTrack, CpdaError> {
    if ed >= t || es >= t {
        return Err(CpdaError::Parameter(format!("ed={ed}, es={es} with {t} frames")));
    }
    if ed == es {
        return Err(CpdaError::DegeneratePhase(ed));
    }
    let cycle = 2.0 * ed.abs_diff(es) as f64;
    let phi = (0..t)
        .map(|i| {
            let p = ((i as f64 - ed as f64) / cycle).rem_euclid(1.0);
            if p >= 1.0 {
                0.0
            } else {
                p
            }
        })
        .collect();
    Ok(PhaseTrack { phi })
}

/// Mean over the spatial axes, `T × C`.
pub fn pool_spatial(clip: &FeatureClip) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(clip.t, clip.c);
    let n = (clip.h * clip.w) as f64;
    for t in 0..clip.t {
        for y in 0..clip.h {
            for x in 0..clip.w {
                for ch in 0..clip.c {
                    out[(t, ch)] += clip.at(t, y, x, ch);
                }
            }
        }
    }
    if n > 0.0 {
        out /= n;
    }
    out
}

/// A named parameter array with its dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    fn uniform(dims: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    fn check(&self, name: &str, dims: &[usize]) -> Result<(), CpdaError> {
        if self.dims != dims || self.data.len() != dims.iter().product::<usize>() {
            return Err(CpdaError::Model(format!(
                "{name} has dims {:?} ({} values), expected {dims:?}",
                self.dims,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(CpdaError::Numeric(format!("{name} has non-finite entries")));
        }
        Ok(())
    }

    /// `W x (+ b)` for a row-major `[out, in]` weight.
    fn affine(&self, bias: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.dims[0], self.dims[1]);
        (0..rows)
            .map(|r| {
                let dot: f64 = self.data[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum();
                dot + bias.map_or(0.0, |b| b.data[r])
            })
            .collect()
    }
}

/// Sizes of a CPDA block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdaShape {
    /// Channels `C` of the feature clip.
    pub channels: usize,
    pub d_phase: usize,
    pub d_edg: usize,
    /// Length of the per-frame dynamic feature.
    pub k2: usize,
    pub heads: usize,
    pub alpha: f64,
}

impl Default for CpdaShape {
    fn default() -> Self {
        Self {
            channels: 8,
            d_phase: 8,
            d_edg: 8,
            k2: 8,
            heads: 2,
            alpha: 0.5,
        }
    }
}

impl CpdaShape {
    pub fn token_dim(&self) -> usize {
        self.channels + self.d_phase + self.d_edg
    }

    pub fn validate(&self) -> Result<(), CpdaError> {
        if self.channels == 0 || self.d_phase == 0 || self.d_edg == 0 || self.k2 == 0 {
            return Err(CpdaError::Model("all CPDA sizes must be ≥ 1".into()));
        }
        if self.heads == 0 || self.token_dim() % self.heads != 0 {
            return Err(CpdaError::Model(format!(
                "{} heads do not divide token dimension {}",
                self.heads,
                self.token_dim()
            )));
        }
        // α = 0 is accepted and disables modulation
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CpdaError::Model(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Parameters of one CPDA block. Linear weights are `[out, in]` row-major;
/// the convolution kernel is `[C_out, C_in, 3, 3, 3]` over `(t, y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdaWeights {
    pub shape: CpdaShape,
    pub phase_w1: Tensor,
    pub phase_b1: Tensor,
    pub phase_w2: Tensor,
    pub phase_b2: Tensor,
    pub edg_w1: Tensor,
    pub edg_b1: Tensor,
    pub edg_w2: Tensor,
    pub edg_b2: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub conv_w: Tensor,
    pub conv_b: Tensor,
}

impl CpdaWeights {
    fn dims(shape: &CpdaShape) -> [(&'static str, Vec<usize>); 16] {
        let (c, dp, de, k2, d) = (shape.channels, shape.d_phase, shape.d_edg, shape.k2, shape.token_dim());
        [
            ("phase_w1", vec![dp, 2]),
            ("phase_b1", vec![dp]),
            ("phase_w2", vec![dp, dp]),
            ("phase_b2", vec![dp]),
            ("edg_w1", vec![de, k2]),
            ("edg_b1", vec![de]),
            ("edg_w2", vec![de, de]),
            ("edg_b2", vec![de]),
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("gate_w", vec![c, d]),
            ("gate_b", vec![c]),
            ("conv_w", vec![c, c, 3, 3, 3]),
            ("conv_b", vec![c]),
        ]
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.phase_w1,
            &self.phase_b1,
            &self.phase_w2,
            &self.phase_b2,
            &self.edg_w1,
            &self.edg_b1,
            &self.edg_w2,
            &self.edg_b2,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.gate_w,
            &self.gate_b,
            &self.conv_w,
            &self.conv_b,
        ]
    }

    fn from_tensors(shape: CpdaShape, mut t: Vec<Tensor>) -> Self {
        let mut next = || t.remove(0);
        Self {
            shape,
            phase_w1: next(),
            phase_b1: next(),
            phase_w2: next(),
            phase_b2: next(),
            edg_w1: next(),
            edg_b1: next(),
            edg_w2: next(),
            edg_b2: next(),
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            gate_w: next(),
            gate_b: next(),
            conv_w: next(),
            conv_b: next(),
        }
    }

    /// All-zero parameters.
    pub fn zeros(shape: CpdaShape) -> Self {
        let t = Self::dims(&shape).iter().map(|(_, d)| Tensor::zeros(d)).collect();
        Self::from_tensors(shape, t)
    }

    /// Uniform `±1/√fan_in` initialization from the `cpda-weights` stream of `seed`.
    pub fn seeded(shape: CpdaShape, seed: u64) -> Self {
        let mut rng = seed::stage_rng(seed, seed::STAGE_CPDA_WEIGHTS);
        let d = shape.token_dim();
        let fan_in = |name: &str| -> usize {
            match name {
                "phase_w1" | "phase_b1" => 2,
                "phase_w2" | "phase_b2" => shape.d_phase,
                "edg_w1" | "edg_b1" => shape.k2,
                "edg_w2" | "edg_b2" => shape.d_edg,
                "conv_w" | "conv_b" => shape.channels * 27,
                _ => d,
            }
        };
        let t = Self::dims(&shape)
            .iter()
            .map(|(name, dims)| Tensor::uniform(dims, 1.0 / (fan_in(name) as f64).sqrt(), &mut rng))
            .collect();
        Self::from_tensors(shape, t)
    }

    /// Zero gate (so `S = 1/2`) and an identity convolution: the block
    /// returns its input unchanged.
    pub fn identity(shape: CpdaShape) -> Self {
        let mut w = Self::zeros(shape);
        w.set_identity_conv();
        w
    }

    /// Center tap 1 on each matching channel, zero bias.
    pub fn set_identity_conv(&mut self) {
        let c = self.shape.channels;
        self.conv_w = Tensor::zeros(&[c, c, 3, 3, 3]);
        for ch in 0..c {
            self.conv_w.data[((ch * c + ch) * 3 + 1) * 9 + 4] = 1.0;
        }
        self.conv_b = Tensor::zeros(&[c]);
    }

    pub fn validate(&self) -> Result<(), CpdaError> {
        self.shape.validate()?;
        for ((name, dims), t) in Self::dims(&self.shape).iter().zip(self.tensors()) {
            t.check(name, dims)?;
        }
        Ok(())
    }
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mlp(w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor, x: &[f64]) -> Vec<f64> {
    let hidden = relu(w1.affine(Some(b1), x));
    w2.affine(Some(b2), &hidden)
}

/// Attention output and the per-head `T × T` softmax weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: DMatrix<f64>,
    pub attention: Vec<DMatrix<f64>>,
}

fn project_rows(x: &DMatrix<f64>, w: &Tensor) -> DMatrix<f64> {
    let (rows, cols) = (w.dims[0], w.dims[1]);
    let wm = DMatrix::from_row_slice(rows, cols, &w.data);
    x * wm.transpose()
}

/// Multi-head self-attention over the rows (tokens) of `tokens`.
pub fn mha_forward_detailed(tokens: &DMatrix<f64>, weights: &CpdaWeights) -> Result<AttentionOutput, CpdaError> {
    let d = weights.shape.token_dim();
    let heads = weights.shape.heads;
    if tokens.ncols() != d {
        return Err(CpdaError::Model(format!(
            "tokens have width {}, weights expect {d}",
            tokens.ncols()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(CpdaError::Model(format!("{heads} heads do not divide {d}")));
    }
    if tokens.iter().any(|v| !v.is_finite()) {
        return Err(CpdaError::Numeric("attention input".into()));
    }
    let t = tokens.nrows();
    let dh = d / heads;
    let q = project_rows(tokens, &weights.wq);
    let k = project_rows(tokens, &weights.wk);
    let v = project_rows(tokens, &weights.wv);
    let scale = 1.0 / (dh as f64).sqrt();

    let mut concat = DMatrix::zeros(t, d);
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let vh = v.columns(h * dh, dh);
        let mut scores = (qh * kh.transpose()) * scale;
        for mut row in scores.row_iter_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|s| *s = (*s - max).exp());
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|s| *s /= sum);
        }
        let out = &scores * vh;
        concat.columns_mut(h * dh, dh).copy_from(&out);
        attention.push(scores);
    }
    let output = project_rows(&concat, &weights.wo);
    if output.iter().any(|v| !v.is_finite()) {
        return Err(CpdaError::Numeric("attention output".into()));
    }
    Ok(AttentionOutput { output, attention })
}

pub fn mha_forward(tokens: &DMatrix<f64>, weights: &CpdaWeights) -> Result<DMatrix<f64>, CpdaError> {
    Ok(mha_forward_detailed(tokens, weights)?.output)
}

/// Zero-padded 3×3×3 convolution over `(t, y, x)` with channel mixing.
pub fn conv3d_same(clip: &FeatureClip, kernel: &Tensor, bias: &Tensor) -> FeatureClip {
    let c = clip.c;
    let mut out = FeatureClip::zeros(clip.t, clip.h, clip.w, c);
    out.level = clip.level;
    for t in 0..clip.t {
        for y in 0..clip.h {
            for x in 0..clip.w {
                for o in 0..c {
                    let mut acc = bias.data[o];
                    for dt in 0..3 {
                        let Some(tt) = (t + dt).checked_sub(1).filter(|&v| v < clip.t) else { continue };
                        for dy in 0..3 {
                            let Some(yy) = (y + dy).checked_sub(1).filter(|&v| v < clip.h) else { continue };
                            for dx in 0..3 {
                                let Some(xx) = (x + dx).checked_sub(1).filter(|&v| v < clip.w) else { continue };
                                let base = clip.index(tt, yy, xx, 0);
                                for i in 0..c {
                                    let w = kernel.data[(((o * c + i) * 3 + dt) * 3 + dy) * 3 + dx];
                                    acc += w * clip.data[base + i];
                                }
                            }
                        }
                    }
                    let idx = out.index(t, y, x, o);
                    out.data[idx] = acc;
                }
            }
        }
    }
    out
}

/// Intermediate tensors of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdaOutput {
    pub enhanced: FeatureClip,
    /// Gate `S`, `T × C`, each entry in `(0, 1)`.
    pub modulation: DMatrix<f64>,
    pub attention: Vec<DMatrix<f64>>,
}

/// Stretches `T−1` dynamic features to `T` by repeating the last row.
pub fn align_dynamic_features(pedg: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>, CpdaError> {
    if pedg.nrows() == t {
        return Ok(pedg.clone());
    }
    if pedg.nrows() + 1 == t && pedg.nrows() > 0 {
        let mut out = pedg.clone().insert_row(pedg.nrows(), 0.0);
        let last = pedg.row(pedg.nrows() - 1).clone_owned();
        out.row_mut(t - 1).copy_from(&last);
        return Ok(out);
    }
    Err(CpdaError::Model(format!(
        "dynamic features have {} rows, clip has {t} frames",
        pedg.nrows()
    )))
}

pub fn cpda_forward_detailed(
    clip: &FeatureClip,
    phase: &PhaseTrack,
    pedg: &DMatrix<f64>,
    weights: &CpdaWeights,
) -> Result<CpdaOutput, CpdaError> {
    weights.validate()?;
    let shape = weights.shape;
    if clip.c != shape.channels {
        return Err(CpdaError::Model(format!(
            "clip has {} channels, weights expect {}",
            clip.c, shape.channels
        )));
    }
    if phase.phi.len() != clip.t {
        return Err(CpdaError::Model(format!(
            "phase track has {} frames, clip has {}",
            phase.phi.len(),
            clip.t
        )));
    }
    if pedg.ncols() != shape.k2 {
        return Err(CpdaError::Model(format!(
            "dynamic features have {} columns, weights expect k2 = {}",
            pedg.ncols(),
            shape.k2
        )));
    }
    if clip.data.iter().any(|v| !v.is_finite()) {
        return Err(CpdaError::Numeric("feature clip".into()));
    }
    let pedg = align_dynamic_features(pedg, clip.t)?;

    let pooled = pool_spatial(clip);
    let d = shape.token_dim();
    let mut tokens = DMatrix::zeros(clip.t, d);
    for t in 0..clip.t {
        let angle = TAU * phase.phi[t];
        let f_phase = mlp(
            &weights.phase_w1,
            &weights.phase_b1,
            &weights.phase_w2,
            &weights.phase_b2,
            &[angle.sin(), angle.cos()],
        );
        let p: Vec<f64> = pedg.row(t).iter().copied().collect();
        let f_edg = mlp(&weights.edg_w1, &weights.edg_b1, &weights.edg_w2, &weights.edg_b2, &p);
        let pooled_row = pooled.row(t);
        let fused = pooled_row.iter().copied().chain(f_phase).chain(f_edg);
        for (c, v) in fused.enumerate() {
            tokens[(t, c)] = v;
        }
    }

    let attn = mha_forward_detailed(&tokens, weights)?;
    let mut modulation = DMatrix::zeros(clip.t, shape.channels);
    for t in 0..clip.t {
        let row: Vec<f64> = attn.output.row(t).iter().copied().collect();
        for (c, g) in weights.gate_w.affine(Some(&weights.gate_b), &row).into_iter().enumerate() {
            modulation[(t, c)] = sigmoid(g);
        }
    }

    let mut x_mod = clip.clone();
    for t in 0..clip.t {
        for y in 0..clip.h {
            for x in 0..clip.w {
                for c in 0..clip.c {
                    let i = clip.index(t, y, x, c);
                    x_mod.data[i] *= 1.0 + shape.alpha * (2.0 * modulation[(t, c)] - 1.0);
                }
            }
        }
    }
    let conv = conv3d_same(&x_mod, &weights.conv_w, &weights.conv_b);
    let mut enhanced = x_mod;
    enhanced
        .data
        .iter_mut()
        .zip(&conv.data)
        .for_each(|(m, c)| *m = 0.5 * *m + 0.5 * c);
    Ok(CpdaOutput {
        enhanced,
        modulation,
        attention: attn.attention,
    })
}

/// Enhanced clip only.
pub fn cpda_forward(
    clip: &FeatureClip,
    phase: &PhaseTrack,
    pedg: &DMatrix<f64>,
    weights: &CpdaWeights,
) -> Result<FeatureClip, CpdaError> {
    Ok(cpda_forward_detailed(clip, phase, pedg, weights)?.enhanced)
}

/// Per-frame mean of `|after − before|`.
pub fn modulation_summary(before: &FeatureClip, after: &FeatureClip) -> Vec<f64> {
    let per = before.h * before.w * before.c;
    before
        .data
        .chunks(per.max(1))
        .zip(after.data.chunks(per.max(1)))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x).abs()).sum::<f64>() / per.max(1) as f64)
        .collect()
}

const FTC_MAGIC: &[u8; 4] = b"FTC1";

/// `FTC1`, little-endian `u32` T, H, W, C, then f32 data in `T×H×W×C` order.
pub fn encode_ftc(clip: &FeatureClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * clip.data.len());
    out.extend_from_slice(FTC_MAGIC);
    for v in [clip.t, clip.h, clip.w, clip.c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &clip.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_ftc(bytes: &[u8]) -> Result<FeatureClip, CpdaError> {
    if bytes.len() < 20 || &bytes[..4] != FTC_MAGIC {
        return Err(CpdaError::Format("not an FTC1 file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (t, h, w, c) = (word(0), word(1), word(2), word(3));
    let n = t * h * w * c;
    if bytes.len() != 20 + 4 * n {
        return Err(CpdaError::Format(format!(
            "FTC1 payload is {} bytes, header implies {}",
            bytes.len() - 20,
            4 * n
        )));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeatureClip::from_vec(t, h, w, c, data)
}
