//! Polar-sector motion descriptors.
//!
//! The image disc around a pole is split into `R × TH` annular sectors. Each
//! sector contributes six features, in this order: mean radial flow, mean
//! tangential flow, their population stddevs, mean gray and gray stddev.
//! Descriptors are concatenated ring-major, then angle, then feature, and
//! reduced by standardization followed by PCA.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowField;
use crate::linalg::{self, row_major};
use crate::plane::Plane;
use crate::seqio::FrameSequence;

pub const FEATURES_PER_SECTOR: usize = 6;
pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-finite input: {0}")]
    Numeric(String),
    #[error("model mismatch: {0}")]
    Model(String),
}

/// Polar partition of the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorGrid {
    pub r_bins: usize,
    pub theta_bins: usize,
    /// Pole `(cx, cy)` in pixel coordinates.
    pub center: (f64, f64),
    pub r_max: f64,
}

impl SectorGrid {
    /// Grid with the pole at the image center and `r_max = min(H, W) / 2`.
    pub fn for_image(width: usize, height: usize, r_bins: usize, theta_bins: usize) -> Self {
        Self {
            r_bins,
            theta_bins,
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            r_max: width.min(height) as f64 / 2.0,
        }
    }

    pub fn sector_count(&self) -> usize {
        self.r_bins * self.theta_bins
    }

    pub fn descriptor_len(&self) -> usize {
        self.sector_count() * FEATURES_PER_SECTOR
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), DescriptorError> {
        if self.r_bins == 0 || self.theta_bins == 0 {
            return Err(DescriptorError::Parameter("r_bins and theta_bins must be ≥ 1".into()));
        }
        if !(self.r_max > 0.0) {
            return Err(DescriptorError::Parameter(format!("r_max {} must be > 0", self.r_max)));
        }
        let (cx, cy) = self.center;
        if !(cx >= 0.0 && cy >= 0.0 && cx <= width as f64 - 1.0 && cy <= height as f64 - 1.0) {
            return Err(DescriptorError::Parameter(format!(
                "pole ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(())
    }

    /// Flat sector index `ring * TH + angle_bin`.
    pub fn sector_index(&self, ring: usize, angle_bin: usize) -> usize {
        ring * self.theta_bins + angle_bin
    }
}

/// Grid settings before they are bound to an image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub r_bins: usize,
    pub theta_bins: usize,
    /// Defaults to `min(H, W) / 2`.
    pub r_max: Option<f64>,
    /// Defaults to the image center.
    pub center: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_bins: 4,
            theta_bins: 12,
            r_max: None,
            center: None,
        }
    }
}

impl GridConfig {
    pub fn resolve(&self, width: usize, height: usize) -> SectorGrid {
        let mut g = SectorGrid::for_image(width, height, self.r_bins, self.theta_bins);
        if let Some(r) = self.r_max {
            g.r_max = r;
        }
        if let Some(c) = self.center {
            g.center = c;
        }
        g
    }
}

/// Sector `(ring, angle_bin)` of a point, or `None` outside the disc.
pub fn sector_of(x: f64, y: f64, grid: &SectorGrid) -> Option<(usize, usize)> {
    let dx = x - grid.center.0;
    let dy = y - grid.center.1;
    let rho = dx.hypot(dy);
    if rho >= grid.r_max {
        return None;
    }
    let ring = ((rho * grid.r_bins as f64 / grid.r_max).floor() as usize).min(grid.r_bins - 1);
    let mut angle = dy.atan2(dx);
    if angle < 0.0 {
        angle += TAU;
    }
    if angle >= TAU {
        angle = 0.0;
    }
    let bin = ((angle * grid.theta_bins as f64 / TAU).floor() as usize).min(grid.theta_bins - 1);
    Some((ring, bin))
}

/// Flat sector index per pixel (row-major), `None` outside the disc.
pub fn sector_map(width: usize, height: usize, grid: &SectorGrid) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push(sector_of(x as f64, y as f64, grid).map(|(r, t)| grid.sector_index(r, t)));
        }
    }
    out
}

/// Per-frame descriptor `d_t`, length `R·TH·6`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDescriptor {
    pub values: Vec<f64>,
    pub frame_index: usize,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean_std(&self) -> (f64, f64) {
        if self.n == 0.0 {
            return (0.0, 0.0);
        }
        let mean = self.sum / self.n;
        let var = (self.sum_sq / self.n - mean * mean).max(0.0);
        (mean, var.sqrt())
    }
}

/// Pools radial/tangential flow and gray statistics per sector.
pub fn extract_descriptor(
    frame: &Plane,
    flow: &FlowField,
    grid: &SectorGrid,
    frame_index: usize,
) -> Result<RawDescriptor, DescriptorError> {
    let map = sector_map(frame.width, frame.height, grid);
    extract_with_map(frame, flow, grid, &map, frame_index)
}

fn extract_with_map(
    frame: &Plane,
    flow: &FlowField,
    grid: &SectorGrid,
    map: &[Option<usize>],
    frame_index: usize,
) -> Result<RawDescriptor, DescriptorError> {
    if !frame.same_shape(&flow.u) || !frame.same_shape(&flow.v) {
        return Err(DescriptorError::Dimension(format!(
            "frame is {}x{}, flow is {}x{}",
            frame.width,
            frame.height,
            flow.width(),
            flow.height()
        )));
    }
    let (cx, cy) = grid.center;
    let mut acc = vec![[Moments::default(); 3]; grid.sector_count()];
    for y in 0..frame.height {
        for x in 0..frame.width {
            let i = y * frame.width + x;
            let Some(s) = map[i] else { continue };
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let rho = dx.hypot(dy);
            let (ex, ey) = if rho > 0.0 { (dx / rho, dy / rho) } else { (0.0, 0.0) };
            let (u, v) = (flow.u.data[i], flow.v.data[i]);
            acc[s][0].push(u * ex + v * ey);
            acc[s][1].push(-u * ey + v * ex);
            acc[s][2].push(frame.data[i]);
        }
    }
    let mut values = Vec::with_capacity(grid.descriptor_len());
    for [radial, tangential, gray] in acc {
        let (mr, sr) = radial.mean_std();
        let (mt, st) = tangential.mean_std();
        let (mg, sg) = gray.mean_std();
        values.extend_from_slice(&[mr, mt, sr, st, mg, sg]);
    }
    Ok(RawDescriptor {
        values,
        frame_index,
    })
}

/// Per-dimension standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Column mean and population stddev (floored at 1e-8) of the rows of `x`.
pub fn fit_scaler(x: &DMatrix<f64>) -> Result<ScalerModel, DescriptorError> {
    let n = x.nrows();
    if n < 2 {
        return Err(DescriptorError::InsufficientData(format!(
            "scaler needs ≥ 2 samples, got {n}"
        )));
    }
    check_finite(x)?;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean.push(m);
        scale.push(var.sqrt().max(SCALE_FLOOR));
    }
    Ok(ScalerModel { mean, scale })
}

impl ScalerModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }

    fn check_dim(&self, n: usize) -> Result<(), DescriptorError> {
        if n != self.dim() {
            return Err(DescriptorError::Model(format!(
                "scaler has {} dims, input has {n}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Principal axes of mean-centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `k × D`, orthonormal rows.
    #[serde(with = "row_major")]
    pub components: DMatrix<f64>,
    /// Nonincreasing, length `k`.
    pub explained_variance: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub k: usize,
    /// Sum of all covariance eigenvalues (trace).
    #[serde(default)]
    pub total_variance: f64,
}

fn check_finite(x: &DMatrix<f64>) -> Result<(), DescriptorError> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(DescriptorError::Numeric(format!(
            "entry ({}, {}) is {}",
            i % x.nrows(),
            i / x.nrows(),
            x[i]
        )));
    }
    Ok(())
}

/// Top-`k` eigenvectors of the covariance `XᵀX/N` of the centered rows of `x`.
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn fit_pca(x: &DMatrix<f64>, k: usize) -> Result<PcaModel, DescriptorError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(DescriptorError::InsufficientData(format!(
            "PCA needs ≥ 2 samples, got {n}"
        )));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(DescriptorError::Parameter(format!(
            "k = {k} outside [1, {}] for {n} samples of dimension {d}",
            (n - 1).min(d)
        )));
    }
    check_finite(x)?;
    let input_mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - input_mean[c]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let total_variance = cov.trace().max(0.0);
    let (values, vectors) = linalg::symmetric_eigen_desc(&cov);

    let mut components = DMatrix::zeros(k, d);
    for j in 0..k {
        let col = vectors.column(j);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[(j, i)] = sign * col[i];
        }
    }
    let explained_variance = values[..k].iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel {
        components,
        explained_variance,
        input_mean,
        k,
        total_variance,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    /// `z = components · (x − mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        if x.len() != self.input_dim() {
            return Err(DescriptorError::Model(format!(
                "PCA expects {} dims, input has {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok((0..self.k)
            .map(|j| {
                self.components
                    .row(j)
                    .iter()
                    .zip(x.iter().zip(&self.input_mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect())
    }

    /// `componentsᵀ · z`, without re-adding the mean.
    pub fn back_project_components(&self, z: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        if z.len() != self.k {
            return Err(DescriptorError::Model(format!(
                "PCA has {} components, input has {}",
                self.k,
                z.len()
            )));
        }
        let d = self.input_dim();
        let mut out = vec![0.0; d];
        for (j, zj) in z.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.components.row(j).iter()) {
                *o += zj * c;
            }
        }
        Ok(out)
    }

    /// `componentsᵀ · z + mean`.
    pub fn back_project(&self, z: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        let mut out = self.back_project_components(z)?;
        out.iter_mut().zip(&self.input_mean).for_each(|(o, m)| *o += m);
        Ok(out)
    }

    /// Fraction of total variance captured by the kept components.
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }
}

/// Fitted descriptor stage of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFit {
    /// Raw descriptors, one row per flow pair.
    pub raw: DMatrix<f64>,
    /// Reduced descriptors `z_t`, `(T−1) × k`.
    pub z: DMatrix<f64>,
    pub scaler: ScalerModel,
    pub pca: PcaModel,
}

/// Serialized scaler + PCA pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorModel {
    pub scaler: ScalerModel,
    pub pca: PcaModel,
}

/// Raw descriptors for every flow, row `t` from `frame_t` and `flow_t`.
pub fn raw_descriptors(
    seq: &FrameSequence,
    flows: &[FlowField],
    grid: &SectorGrid,
) -> Result<DMatrix<f64>, DescriptorError> {
    if flows.len() + 1 != seq.len() {
        return Err(DescriptorError::Dimension(format!(
            "{} flows for {} frames",
            flows.len(),
            seq.len()
        )));
    }
    grid.validate(seq.width(), seq.height())?;
    let map = sector_map(seq.width(), seq.height(), grid);
    let rows: Vec<RawDescriptor> = flows
        .par_iter()
        .enumerate()
        .map(|(t, f)| extract_with_map(&seq.frames()[t], f, grid, &map, t))
        .collect::<Result<_, _>>()?;
    let d = grid.descriptor_len();
    Ok(DMatrix::from_fn(rows.len(), d, |r, c| rows[r].values[c]))
}

/// Descriptors → standardization → PCA. Missing models are fitted on this
/// sequence; supplied models are used for transform only.
pub fn descriptor_sequence(
    seq: &FrameSequence,
    flows: &[FlowField],
    grid: &SectorGrid,
    scaler: Option<&ScalerModel>,
    pca: Option<&PcaModel>,
    k: usize,
) -> Result<DescriptorFit, DescriptorError> {
    let raw = raw_descriptors(seq, flows, grid)?;
    let scaler = match scaler {
        Some(s) => {
            if s.dim() != raw.ncols() {
                return Err(DescriptorError::Model(format!(
                    "scaler has {} dims, grid produces {}",
                    s.dim(),
                    raw.ncols()
                )));
            }
            s.clone()
        }
        None => fit_scaler(&raw)?,
    };
    let mut scaled = raw.clone();
    for mut row in scaled.row_iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - scaler.mean[c]) / scaler.scale[c];
        }
    }
    let pca = match pca {
        Some(p) => {
            if p.input_dim() != raw.ncols() {
                return Err(DescriptorError::Model(format!(
                    "PCA expects {} dims, grid produces {}",
                    p.input_dim(),
                    raw.ncols()
                )));
            }
            p.clone()
        }
        None => fit_pca(&scaled, k)?,
    };
    let mut z = DMatrix::zeros(scaled.nrows(), pca.k);
    for r in 0..scaled.nrows() {
        let row: Vec<f64> = scaled.row(r).iter().copied().collect();
        for (c, v) in pca.project(&row)?.into_iter().enumerate() {
            z[(r, c)] = v;
        }
    }
    Ok(DescriptorFit {
        raw,
        z,
        scaler,
        pca,
    })
}

/// CSV with header `t,f0,…,f{D−1}`, one row per flow pair.
pub fn descriptors_csv(raw: &DMatrix<f64>) -> String {
    let mut s = String::from("t");
    for c in 0..raw.ncols() {
        write!(s, ",f{c}").unwrap();
    }
    s.push('\n');
    for r in 0..raw.nrows() {
        write!(s, "{r}").unwrap();
        for c in 0..raw.ncols() {
            write!(s, ",{}", raw[(r, c)]).unwrap();
        }
        s.push('\n');
    }
    s
}
