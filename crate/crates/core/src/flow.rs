//! Dense Horn–Schunck optical flow.
//!
//! Gradients are central differences on the presmoothed average of both
//! frames, the temporal derivative is the difference of the presmoothed
//! frames, and the coupled Euler–Lagrange equations are relaxed with a fixed
//! number of Jacobi sweeps from a zero field. Borders replicate the edge.
//!
//! Intensities are rescaled to the 0–255 range before the solve so that the
//! smoothness weight `alpha` has its conventional magnitude.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::Plane;
use crate::seqio::{self, FrameSequence, SeqIoError};

const INTENSITY_SCALE: f64 = 255.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("frame {0}x{1} is smaller than 3x3")]
    TooSmall(usize, usize),
    #[error("invalid flow parameter: {0}")]
    Parameter(String),
    #[error("flow file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] SeqIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Smoothness weight.
    pub alpha: f64,
    /// Jacobi sweeps.
    pub iterations: usize,
    /// Gaussian presmoothing stddev in pixels; 0 disables it.
    pub presmooth_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            iterations: 100,
            presmooth_sigma: 1.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FlowError::Parameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(FlowError::Parameter("iterations must be ≥ 1".into()));
        }
        if !(self.presmooth_sigma >= 0.0 && self.presmooth_sigma.is_finite()) {
            return Err(FlowError::Parameter(format!(
                "presmooth_sigma must be ≥ 0, got {}",
                self.presmooth_sigma
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement in pixels/frame; `u` along x (columns), `v` along y (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Plane,
    pub v: Plane,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            u: Plane::new(width, height),
            v: Plane::new(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.u.width
    }

    pub fn height(&self) -> usize {
        self.u.height
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.u.data.len().max(1) as f64;
        self.u
            .data
            .iter()
            .zip(&self.v.data)
            .map(|(u, v)| u.hypot(*v))
            .sum::<f64>()
            / n
    }
}

/// Separable Gaussian blur, kernel radius `ceil(3σ)`, replicate-edge.
pub fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * src.get_clamped(x as isize + i as isize - radius, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * tmp.get_clamped(x as isize, y as isize + i as isize - radius);
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn neighbor_mean(p: &Plane, x: usize, y: usize) -> f64 {
    let (xi, yi) = (x as isize, y as isize);
    0.25 * (p.get_clamped(xi - 1, yi)
        + p.get_clamped(xi + 1, yi)
        + p.get_clamped(xi, yi - 1)
        + p.get_clamped(xi, yi + 1))
}

/// Horn–Schunck flow from `prev` to `next`.
pub fn compute_flow(prev: &Plane, next: &Plane, params: &FlowParams) -> Result<FlowField, FlowError> {
    params.validate()?;
    if !prev.same_shape(next) {
        return Err(FlowError::Dimension(format!(
            "prev is {}x{}, next is {}x{}",
            prev.width, prev.height, next.width, next.height
        )));
    }
    let (w, h) = (prev.width, prev.height);
    if w < 3 || h < 3 {
        return Err(FlowError::TooSmall(w, h));
    }

    let p = gaussian_blur(prev, params.presmooth_sigma);
    let n = gaussian_blur(next, params.presmooth_sigma);
    let avg = Plane::from_vec(
        w,
        h,
        p.data.iter().zip(&n.data).map(|(a, b)| 0.5 * (a + b)).collect(),
    );

    let len = w * h;
    let mut ix = vec![0.0; len];
    let mut iy = vec![0.0; len];
    let mut it = vec![0.0; len];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let i = y * w + x;
            ix[i] = 0.5 * (avg.get_clamped(xi + 1, yi) - avg.get_clamped(xi - 1, yi)) * INTENSITY_SCALE;
            iy[i] = 0.5 * (avg.get_clamped(xi, yi + 1) - avg.get_clamped(xi, yi - 1)) * INTENSITY_SCALE;
            it[i] = (n.data[i] - p.data[i]) * INTENSITY_SCALE;
        }
    }

    let alpha2 = params.alpha * params.alpha;
    let mut u = Plane::new(w, h);
    let mut v = Plane::new(w, h);
    let mut u_next = Plane::new(w, h);
    let mut v_next = Plane::new(w, h);
    for _ in 0..params.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ub = neighbor_mean(&u, x, y);
                let vb = neighbor_mean(&v, x, y);
                let num = ix[i] * ub + iy[i] * vb + it[i];
                let den = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
                let k = num / den;
                u_next.data[i] = ub - ix[i] * k;
                v_next.data[i] = vb - iy[i] * k;
            }
        }
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }
    Ok(FlowField { u, v })
}

/// Flow for every consecutive pair; element `t` is `frame_t → frame_{t+1}`.
pub fn flow_sequence(seq: &FrameSequence, params: &FlowParams) -> Result<Vec<FlowField>, FlowError> {
    params.validate()?;
    seq.frames()
        .par_windows(2)
        .map(|pair| compute_flow(&pair[0], &pair[1], params))
        .collect()
}

const FLOW_MAGIC: &[u8; 4] = b"FLW1";

/// `FLW1`, little-endian `u32` H, W, then `H·W` f32 `u`, then `H·W` f32 `v`.
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let n = flow.u.data.len();
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    for v in flow.u.data.iter().chain(&flow.v.data) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField, FlowError> {
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(FlowError::Format("not a FLW1 file".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = w * h;
    if bytes.len() != 12 + 8 * n {
        return Err(FlowError::Format(format!(
            "FLW1 payload is {} bytes, expected {}",
            bytes.len() - 12,
            8 * n
        )));
    }
    let vals: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FlowField {
        u: Plane::from_vec(w, h, vals[..n].to_vec()),
        v: Plane::from_vec(w, h, vals[n..].to_vec()),
    })
}

pub fn flow_file_name(t: usize) -> String {
    format!("flow_{t:04}.bin")
}

/// Writes `flow_%04d.bin` for each field into `dir`.
pub fn save_flows(flows: &[FlowField], dir: &Path) -> Result<(), FlowError> {
    fs::create_dir_all(dir).map_err(|source| SeqIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (t, f) in flows.iter().enumerate() {
        seqio::write_atomic(&dir.join(flow_file_name(t)), &encode_flow(f))?;
    }
    Ok(())
}
