//! Independent reference implementations used as test oracles.
//!
//! Everything here is written with plain loops and `Vec`s so that it shares
//! no code path with the library.
#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use echodyn::cpda::{CpdaShape, CpdaWeights, Tensor};
use echodyn::metrics::BinaryMask;

// ---------------------------------------------------------------------------
// Dense linear algebra

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order and the matching eigenvectors (one per inner `Vec`).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Population covariance `XcᵀXc / N` of row samples.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    c
}

/// Gaussian elimination with partial pivoting; `b` holds several right-hand sides as columns.
pub fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let r = b[0].len();
    let mut aug: Vec<Vec<f64>> = (0..n).map(|i| a[i].iter().chain(&b[i]).copied().collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
        aug.swap(col, piv);
        for row in col + 1..n {
            let f = aug[row][col] / aug[col][col];
            for k in col..n + r {
                aug[row][k] -= f * aug[col][k];
            }
        }
    }
    let mut x = vec![vec![0.0; r]; n];
    for i in (0..n).rev() {
        for c in 0..r {
            let s: f64 = (i + 1..n).map(|k| aug[i][k] * x[k][c]).sum();
            x[i][c] = (aug[i][n + c] - s) / aug[i][i];
        }
    }
    x
}

/// Ridge regression `(ΦᵀΦ + λI)⁻¹ΦᵀY` and its mean squared residual per sample.
pub fn ridge_oracle(phi: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> (Vec<Vec<f64>>, f64) {
    let m = phi[0].len();
    let k = y[0].len();
    let mut gram = vec![vec![0.0; m]; m];
    let mut rhs = vec![vec![0.0; k]; m];
    for (p, t) in phi.iter().zip(y) {
        for i in 0..m {
            for j in 0..m {
                gram[i][j] += p[i] * p[j];
            }
            for c in 0..k {
                rhs[i][c] += p[i] * t[c];
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let w = gauss_solve(&gram, &rhs);
    let mut sse = 0.0;
    for (p, t) in phi.iter().zip(y) {
        for c in 0..k {
            let pred: f64 = (0..m).map(|i| p[i] * w[i][c]).sum();
            sse += (pred - t[c]).powi(2);
        }
    }
    (w, sse / phi.len() as f64)
}

// ---------------------------------------------------------------------------
// Segmentation metrics

fn border_pixels(m: &BinaryMask) -> Vec<(f64, f64)> {
    let (w, h) = (m.width as i64, m.height as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.data[(y * w + x) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !inside(x, y) {
                continue;
            }
            let mut edge = false;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    edge |= !inside(x + dx, y + dy);
                }
            }
            if edge {
                out.push((x as f64, y as f64));
            }
        }
    }
    out
}

/// All-pairs symmetric boundary distances, then the interpolated 95th percentile.
pub fn brute_hd95(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let (ba, bb) = (border_pixels(a), border_pixels(b));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let nearest = |p: &(f64, f64), set: &[(f64, f64)]| {
        set.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
    };
    let mut d: Vec<f64> = ba.iter().map(|p| nearest(p, &bb)).chain(bb.iter().map(|p| nearest(p, &ba))).collect();
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    Some(d[lo] + (pos - lo as f64) * (d[hi] - d[lo]))
}

// ---------------------------------------------------------------------------
// CPDA loop oracle, generic so that forward-mode derivatives come for free

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn re(self) -> f64;
    fn exp(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn var(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, eps: self.eps + o.eps }
    }
}
impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, eps: self.eps - o.eps }
    }
}
impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}
impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self { re: self.re / o.re, eps: (self.eps * o.re - self.re * o.eps) / (o.re * o.re) }
    }
}
impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self { re: -self.re, eps: -self.eps }
    }
}
impl Scalar for Dual {
    fn cst(v: f64) -> Self {
        Self { re: v, eps: 0.0 }
    }
    fn re(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self { re: e, eps: e * self.eps }
    }
}

pub const TENSOR_NAMES: [&str; 16] = [
    "phase_w1", "phase_b1", "phase_w2", "phase_b2", "edg_w1", "edg_b1", "edg_w2", "edg_b2", "wq", "wk", "wv", "wo",
    "gate_w", "gate_b", "conv_w", "conv_b",
];

pub fn tensor<'a>(w: &'a CpdaWeights, name: &str) -> &'a Tensor {
    match name {
        "phase_w1" => &w.phase_w1,
        "phase_b1" => &w.phase_b1,
        "phase_w2" => &w.phase_w2,
        "phase_b2" => &w.phase_b2,
        "edg_w1" => &w.edg_w1,
        "edg_b1" => &w.edg_b1,
        "edg_w2" => &w.edg_w2,
        "edg_b2" => &w.edg_b2,
        "wq" => &w.wq,
        "wk" => &w.wk,
        "wv" => &w.wv,
        "wo" => &w.wo,
        "gate_w" => &w.gate_w,
        "gate_b" => &w.gate_b,
        "conv_w" => &w.conv_w,
        "conv_b" => &w.conv_b,
        _ => panic!("unknown tensor {name}"),
    }
}

pub fn tensor_mut<'a>(w: &'a mut CpdaWeights, name: &str) -> &'a mut Tensor {
    match name {
        "phase_w1" => &mut w.phase_w1,
        "phase_b1" => &mut w.phase_b1,
        "phase_w2" => &mut w.phase_w2,
        "phase_b2" => &mut w.phase_b2,
        "edg_w1" => &mut w.edg_w1,
        "edg_b1" => &mut w.edg_b1,
        "edg_w2" => &mut w.edg_w2,
        "edg_b2" => &mut w.edg_b2,
        "wq" => &mut w.wq,
        "wk" => &mut w.wk,
        "wv" => &mut w.wv,
        "wo" => &mut w.wo,
        "gate_w" => &mut w.gate_w,
        "gate_b" => &mut w.gate_b,
        "conv_w" => &mut w.conv_w,
        "conv_b" => &mut w.conv_b,
        _ => panic!("unknown tensor {name}"),
    }
}

/// Weights lifted into scalar type `S`, keyed by position in [`TENSOR_NAMES`].
pub struct LoopParams<S> {
    pub shape: CpdaShape,
    tensors: Vec<Vec<S>>,
}

impl<S: Scalar> LoopParams<S> {
    pub fn lift(w: &CpdaWeights, mut f: impl FnMut(&str, usize, f64) -> S) -> Self {
        let tensors = TENSOR_NAMES
            .iter()
            .map(|name| tensor(w, name).data.iter().enumerate().map(|(i, &v)| f(name, i, v)).collect())
            .collect();
        Self { shape: w.shape, tensors }
    }

    fn get(&self, name: &str) -> &[S] {
        let i = TENSOR_NAMES.iter().position(|n| *n == name).unwrap();
        &self.tensors[i]
    }
}

fn dense<S: Scalar>(w: &[S], b: Option<&[S]>, out: usize, x: &[S]) -> Vec<S> {
    let inp = x.len();
    (0..out)
        .map(|o| {
            let mut acc = b.map_or(S::cst(0.0), |b| b[o]);
            for i in 0..inp {
                acc = acc + w[o * inp + i] * x[i];
            }
            acc
        })
        .collect()
}

fn relu<S: Scalar>(v: Vec<S>) -> Vec<S> {
    v.into_iter().map(|x| if x.re() > 0.0 { x } else { S::cst(0.0) }).collect()
}

/// Plain-loop forward pass over a clip stored `t, y, x, c`. `pedg` must already
/// have one row per frame.
pub fn cpda_loop<S: Scalar>(
    clip: &[S],
    dims: (usize, usize, usize, usize),
    phi: &[f64],
    pedg: &[Vec<S>],
    p: &LoopParams<S>,
) -> Vec<S> {
    let (t_len, h, w, c) = dims;
    let sh = p.shape;
    let d = sh.token_dim();
    let at = |t: usize, y: usize, x: usize, ch: usize| ((t * h + y) * w + x) * c + ch;

    let mut tokens = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut tok = Vec::with_capacity(d);
        for ch in 0..c {
            let mut s = S::cst(0.0);
            for y in 0..h {
                for x in 0..w {
                    s = s + clip[at(t, y, x, ch)];
                }
            }
            tok.push(s / S::cst((h * w) as f64));
        }
        let ang = 2.0 * std::f64::consts::PI * phi[t];
        let ph_in = [S::cst(ang.sin()), S::cst(ang.cos())];
        let hid = relu(dense(p.get("phase_w1"), Some(p.get("phase_b1")), sh.d_phase, &ph_in));
        tok.extend(dense(p.get("phase_w2"), Some(p.get("phase_b2")), sh.d_phase, &hid));
        let hid = relu(dense(p.get("edg_w1"), Some(p.get("edg_b1")), sh.d_edg, &pedg[t]));
        tok.extend(dense(p.get("edg_w2"), Some(p.get("edg_b2")), sh.d_edg, &hid));
        tokens.push(tok);
    }

    let q: Vec<Vec<S>> = tokens.iter().map(|x| dense(p.get("wq"), None, d, x)).collect();
    let k: Vec<Vec<S>> = tokens.iter().map(|x| dense(p.get("wk"), None, d, x)).collect();
    let v: Vec<Vec<S>> = tokens.iter().map(|x| dense(p.get("wv"), None, d, x)).collect();
    let dh = d / sh.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = vec![vec![S::cst(0.0); d]; t_len];
    for head in 0..sh.heads {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..t_len {
            let scores: Vec<S> = (0..t_len)
                .map(|j| {
                    let mut s = S::cst(0.0);
                    for col in cols.clone() {
                        s = s + q[i][col] * k[j][col];
                    }
                    s * S::cst(scale)
                })
                .collect();
            let max = scores.iter().map(|s| s.re()).fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<S> = scores.iter().map(|&s| (s - S::cst(max)).exp()).collect();
            let mut total = S::cst(0.0);
            for &e in &ex {
                total = total + e;
            }
            for col in cols.clone() {
                let mut acc = S::cst(0.0);
                for j in 0..t_len {
                    acc = acc + ex[j] / total * v[j][col];
                }
                concat[i][col] = acc;
            }
        }
    }

    let mut x_mod = clip.to_vec();
    for t in 0..t_len {
        let attended = dense(p.get("wo"), None, d, &concat[t]);
        let gate = dense(p.get("gate_w"), Some(p.get("gate_b")), c, &attended);
        for (ch, g) in gate.into_iter().enumerate() {
            let s = S::cst(1.0) / (S::cst(1.0) + (-g).exp());
            let factor = S::cst(1.0) + S::cst(sh.alpha) * (S::cst(2.0) * s - S::cst(1.0));
            for y in 0..h {
                for x in 0..w {
                    let i = at(t, y, x, ch);
                    x_mod[i] = x_mod[i] * factor;
                }
            }
        }
    }

    let kw = p.get("conv_w");
    let kb = p.get("conv_b");
    let mut out = x_mod.clone();
    for t in 0..t_len as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                for o in 0..c {
                    let mut acc = kb[o];
                    for dt in -1..=1i64 {
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                let (tt, yy, xx) = (t + dt, y + dy, x + dx);
                                if tt < 0 || yy < 0 || xx < 0 || tt >= t_len as i64 || yy >= h as i64 || xx >= w as i64 {
                                    continue;
                                }
                                for i in 0..c {
                                    let widx = (((o * c + i) * 3 + (dt + 1) as usize) * 3 + (dy + 1) as usize) * 3
                                        + (dx + 1) as usize;
                                    acc = acc + kw[widx] * x_mod[at(tt as usize, yy as usize, xx as usize, i)];
                                }
                            }
                        }
                    }
                    let idx = at(t as usize, y as usize, x as usize, o);
                    out[idx] = S::cst(0.5) * x_mod[idx] + S::cst(0.5) * acc;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Mask perturbations

/// One 3×3 erosion (`grow = false`) or dilation (`grow = true`) of `label`.
/// Eroded pixels become background; dilation overwrites whatever was there.
pub fn morph(map: &echodyn::LabelMap, label: u8, grow: bool) -> echodyn::LabelMap {
    let (w, h) = (map.width as i64, map.height as i64);
    let is = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && map.data[(y * w + x) as usize] == label;
    let mut out = map.clone();
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            let mut all = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let v = is(x + dx, y + dy);
                    any |= v;
                    all &= v;
                }
            }
            let i = (y * w + x) as usize;
            if grow && any {
                out.data[i] = label;
            } else if !grow && is(x, y) && !all {
                out.data[i] = 0;
            }
        }
    }
    out
}
