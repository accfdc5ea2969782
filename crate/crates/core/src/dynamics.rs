//! RBF model of descriptor dynamics and the echo-dynamics graph.
//!
//! The one-step difference `Δz_t = z_{t+1} − z_t` is approximated by
//! `Wᵀ Φ(z_t)`, where `Φ` stacks Gaussian responses around K-means centers.
//! Weights are learned by per-sample LMS cycled over the trajectory (or by
//! ridge least squares). Prediction residuals weight the kernel responses to
//! give per-frame energies `E_t`; the residual is also back-projected into
//! descriptor space and pooled per polar sector to form the EDG.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{
    self, DescriptorError, PcaModel, ScalerModel, SectorGrid, FEATURES_PER_SECTOR,
};
use crate::linalg::row_major;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training diverged at epoch {epoch} (mean squared residual {residual:e}); try a smaller learn_rate")]
    Divergence { epoch: usize, residual: f64 },
    #[error("model mismatch: {0}")]
    Model(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// How the output weights are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Per-sample LMS cycled over the trajectory.
    #[default]
    Lms,
    /// Closed-form ridge least squares.
    Ls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbfConfig {
    pub m_centers: usize,
    /// Kernel width; `None` resolves to the median pairwise center distance.
    pub sigma: Option<f64>,
    pub learn_rate: f64,
    pub epochs: usize,
    pub ridge: f64,
    pub seed: u64,
    pub fit: FitMode,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            m_centers: 16,
            sigma: None,
            learn_rate: 0.05,
            epochs: 200,
            ridge: 1e-6,
            seed: 0,
            fit: FitMode::Lms,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.m_centers == 0 {
            return Err(DynamicsError::Parameter("m_centers must be ≥ 1".into()));
        }
        if !(self.learn_rate > 0.0) {
            return Err(DynamicsError::Parameter("learn_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(DynamicsError::Parameter("epochs must be ≥ 1".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(DynamicsError::Parameter(format!("sigma {s} must be > 0")));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(DynamicsError::Parameter("ridge must be ≥ 0".into()));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().copied().collect()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after 100 iterations or when assignments stop changing. A cluster
/// that empties out is reseeded at the point farthest from its own center.
pub fn kmeans(z: &DMatrix<f64>, m: usize, seed: u64) -> Result<DMatrix<f64>, DynamicsError> {
    let (n, k) = z.shape();
    if m == 0 {
        return Err(DynamicsError::Parameter("need at least one center".into()));
    }
    if n < m {
        return Err(DynamicsError::InsufficientData(format!(
            "{n} points for {m} centers"
        )));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|r| row(z, r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(m);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(&points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let nearest = |p: &[f64], centers: &[Vec<f64>]| {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        (best, best_d)
    };

    let mut assign: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            dists[i] = d;
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; k]; m];
        let mut counts = vec![0usize; m];
        for (p, &j) in points.iter().zip(&assign) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..m {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..m {
            if counts[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n ≥ 1");
                centers[j] = points[far].clone();
                dists[far] = 0.0;
                // force another assignment pass
                assign[far] = usize::MAX;
            }
        }
    }
    Ok(DMatrix::from_fn(m, k, |r, c| centers[r][c]))
}

/// Median pairwise distance between centers; 1.0 when undefined or zero.
pub fn median_center_distance(centers: &DMatrix<f64>) -> f64 {
    let m = centers.nrows();
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(sq_dist(&row(centers, i), &row(centers, j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) };
    if med > 1e-12 {
        med
    } else {
        1.0
    }
}

/// Gaussian responses `exp(−‖z − c_i‖² / 2σ²)` for every center.
pub fn rbf_response(z: &[f64], centers: &DMatrix<f64>, sigma: f64) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    (0..centers.nrows())
        .map(|i| {
            let d2: f64 = z
                .iter()
                .zip(centers.row(i).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-d2 / denom).exp()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    /// `M × k`.
    #[serde(with = "row_major")]
    pub centers: DMatrix<f64>,
    /// `M × k`; row `i` is the weight vector of center `i`.
    #[serde(with = "row_major")]
    pub weights: DMatrix<f64>,
    pub sigma: f64,
    pub config: RbfConfig,
    /// Mean squared one-step residual after each epoch.
    pub residual_history: Vec<f64>,
}

impl DynamicsModel {
    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn response(&self, z: &[f64]) -> Vec<f64> {
        rbf_response(z, &self.centers, self.sigma)
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

/// `Wᵀ φ` for a given response vector.
fn apply_weights(weights: &DMatrix<f64>, phi: &[f64]) -> Vec<f64> {
    let k = weights.ncols();
    let mut out = vec![0.0; k];
    for (i, p) in phi.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += weights[(i, c)] * p;
        }
    }
    out
}

/// Δẑ = Wᵀ Φ(z).
pub fn predict_delta(model: &DynamicsModel, z: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    if z.len() != model.dim() {
        return Err(DynamicsError::Model(format!(
            "model state dimension is {}, input has {}",
            model.dim(),
            z.len()
        )));
    }
    Ok(apply_weights(&model.weights, &model.response(z)))
}

/// One-step targets `Δz_t`, `(N−1) × k`.
pub fn deltas(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    DMatrix::from_fn(n.saturating_sub(1), k, |r, c| z[(r + 1, c)] - z[(r, c)])
}

/// Kernel responses for the first `N−1` states, `(N−1) × M`.
pub fn design_matrix(z: &DMatrix<f64>, centers: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = z.nrows().saturating_sub(1);
    let m = centers.nrows();
    let mut phi = DMatrix::zeros(n, m);
    for t in 0..n {
        for (i, v) in rbf_response(&row(z, t), centers, sigma).into_iter().enumerate() {
            phi[(t, i)] = v;
        }
    }
    phi
}

/// Mean over samples of the squared residual norm.
pub fn mean_squared_residual(phi: &DMatrix<f64>, targets: &DMatrix<f64>, weights: &DMatrix<f64>) -> f64 {
    let n = phi.nrows();
    if n == 0 {
        return 0.0;
    }
    let pred = phi * weights;
    (pred - targets).iter().map(|v| v * v).sum::<f64>() / n as f64
}

/// Ridge least-squares weights `(ΦᵀΦ + λI)⁻¹ Φᵀ ΔZ`.
pub fn ridge_weights(
    phi: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>, DynamicsError> {
    let m = phi.ncols();
    let gram = phi.transpose() * phi + DMatrix::identity(m, m) * lambda;
    let rhs = phi.transpose() * targets;
    if let Some(ch) = gram.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    gram.lu()
        .solve(&rhs)
        .ok_or_else(|| DynamicsError::Model("singular normal equations; increase ridge".into()))
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Fits centers, kernel width and output weights to the trajectory `z`.
pub fn train_dynamics(z: &DMatrix<f64>, config: &RbfConfig) -> Result<DynamicsModel, DynamicsError> {
    config.validate()?;
    let (n, k) = z.shape();
    let need = config.m_centers.max(2);
    if n < need {
        return Err(DynamicsError::InsufficientData(format!(
            "{n} states, need at least {need}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::Model("non-finite state".into()));
    }
    let centers = kmeans(z, config.m_centers, config.seed)?;
    let sigma = config.sigma.unwrap_or_else(|| median_center_distance(&centers));
    let targets = deltas(z);
    let phi = design_matrix(z, &centers, sigma);
    let m = config.m_centers;

    let (weights, history) = match config.fit {
        FitMode::Ls => {
            let w = ridge_weights(&phi, &targets, config.ridge)?;
            let mse = mean_squared_residual(&phi, &targets, &w);
            (w, vec![mse; config.epochs])
        }
        FitMode::Lms => {
            let mut w = DMatrix::<f64>::zeros(m, k);
            let mut history = Vec::with_capacity(config.epochs);
            let rate = config.learn_rate;
            for epoch in 0..config.epochs {
                for t in 0..targets.nrows() {
                    let phi_t: Vec<f64> = phi.row(t).iter().copied().collect();
                    let pred = apply_weights(&w, &phi_t);
                    for c in 0..k {
                        let err = targets[(t, c)] - pred[c];
                        if err == 0.0 {
                            continue;
                        }
                        for (i, p) in phi_t.iter().enumerate() {
                            w[(i, c)] += rate * p * err;
                        }
                    }
                }
                let mse = mean_squared_residual(&phi, &targets, &w);
                if !mse.is_finite() || mse > DIVERGENCE_LIMIT {
                    return Err(DynamicsError::Divergence {
                        epoch,
                        residual: mse,
                    });
                }
                history.push(mse);
            }
            (w, history)
        }
    };
    Ok(DynamicsModel {
        centers,
        weights,
        sigma,
        config: config.clone(),
        residual_history: history,
    })
}

/// Residual-weighted kernel responses of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyFrame {
    /// `Φ(z_t) · ‖Δẑ_t − Δz_t‖₂`, length M.
    pub e: Vec<f64>,
    pub residual_norm: f64,
    pub frame_index: usize,
}

/// `E_t` for every transition `t = 0..N−2`.
pub fn energy_sequence(model: &DynamicsModel, z: &DMatrix<f64>) -> Result<Vec<EnergyFrame>, DynamicsError> {
    if z.nrows() < 2 {
        return Err(DynamicsError::InsufficientData(format!(
            "{} states, need at least 2",
            z.nrows()
        )));
    }
    if z.ncols() != model.dim() {
        return Err(DynamicsError::Model(format!(
            "model state dimension is {}, trajectory has {}",
            model.dim(),
            z.ncols()
        )));
    }
    (0..z.nrows() - 1)
        .map(|t| {
            let zt = row(z, t);
            let phi = model.response(&zt);
            let pred = apply_weights(&model.weights, &phi);
            let residual_norm = pred
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let d = p - (z[(t + 1, c)] - z[(t, c)]);
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            Ok(EnergyFrame {
                e: phi.iter().map(|p| p * residual_norm).collect(),
                residual_norm,
                frame_index: t,
            })
        })
        .collect()
}

/// Per-sector energy of one transition, ring-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgMap {
    pub r_bins: usize,
    pub theta_bins: usize,
    pub sectors: Vec<f64>,
    pub frame_index: usize,
}

impl EdgMap {
    pub fn get(&self, ring: usize, angle_bin: usize) -> f64 {
        self.sectors[ring * self.theta_bins + angle_bin]
    }

    pub fn total(&self) -> f64 {
        self.sectors.iter().sum()
    }
}

/// Remaps a transition's prediction residual onto the sector grid.
///
/// The residual `Δẑ_t − Δz_t` is taken back through the PCA components
/// (no mean) and the scaler's per-dimension scale into raw descriptor space;
/// each sector's value is the L2 norm of its six feature residuals times the
/// mean kernel response at `z_t`.
pub fn edg_from_energy(
    frame: &EnergyFrame,
    model: &DynamicsModel,
    pca: &PcaModel,
    scaler: &ScalerModel,
    grid: &SectorGrid,
    z_t: &[f64],
    dz_t: &[f64],
) -> Result<EdgMap, DynamicsError> {
    if pca.k != model.dim() || dz_t.len() != model.dim() {
        return Err(DynamicsError::Model(format!(
            "PCA has {} components, model state is {}, Δz has {}",
            pca.k,
            model.dim(),
            dz_t.len()
        )));
    }
    if pca.input_dim() != scaler.dim() || scaler.dim() != grid.descriptor_len() {
        return Err(DynamicsError::Model(format!(
            "descriptor length {} (grid) vs PCA {} vs scaler {}",
            grid.descriptor_len(),
            pca.input_dim(),
            scaler.dim()
        )));
    }
    let phi = model.response(z_t);
    let pred = apply_weights(&model.weights, &phi);
    let residual: Vec<f64> = pred.iter().zip(dz_t).map(|(p, d)| p - d).collect();
    let mut raw = pca.back_project_components(&residual)?;
    raw.iter_mut().zip(&scaler.scale).for_each(|(v, s)| *v *= s);
    let mean_phi = phi.iter().sum::<f64>() / phi.len() as f64;
    let sectors = raw
        .chunks_exact(FEATURES_PER_SECTOR)
        .map(|block| {
            let v = block.iter().map(|x| x * x).sum::<f64>().sqrt() * mean_phi;
            if v < 0.0 {
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(EdgMap {
        r_bins: grid.r_bins,
        theta_bins: grid.theta_bins,
        sectors,
        frame_index: frame.frame_index,
    })
}

/// Secondary PCA over stacked `E_t`; returns one `k₂`-vector per frame.
pub fn pedg_sequence(
    energies: &[EnergyFrame],
    k2: usize,
) -> Result<(DMatrix<f64>, PcaModel), DynamicsError> {
    if energies.len() < 2 {
        return Err(DynamicsError::InsufficientData(format!(
            "{} energy frames, need at least 2",
            energies.len()
        )));
    }
    let m = energies[0].e.len();
    if energies.iter().any(|f| f.e.len() != m) {
        return Err(DynamicsError::Model("energy frames differ in length".into()));
    }
    let stacked = DMatrix::from_fn(energies.len(), m, |r, c| energies[r].e[c]);
    let pca = descriptor::fit_pca(&stacked, k2)?;
    let mut p = DMatrix::zeros(energies.len(), k2);
    for (r, f) in energies.iter().enumerate() {
        for (c, v) in pca.project(&f.e)?.into_iter().enumerate() {
            p[(r, c)] = v;
        }
    }
    Ok((p, pca))
}

/// `t,r,theta,energy`, one line per sector per frame.
pub fn edg_csv(maps: &[EdgMap]) -> String {
    let mut s = String::from("t,r,theta,energy\n");
    for m in maps {
        for r in 0..m.r_bins {
            for th in 0..m.theta_bins {
                writeln!(s, "{},{r},{th},{}", m.frame_index, m.get(r, th)).unwrap();
            }
        }
    }
    s
}

/// `t,p0,…`, one line per row.
pub fn matrix_csv(m: &DMatrix<f64>, prefix: &str) -> String {
    let mut s = String::from("t");
    for c in 0..m.ncols() {
        write!(s, ",{prefix}{c}").unwrap();
    }
    s.push('\n');
    for r in 0..m.nrows() {
        write!(s, "{r}").unwrap();
        for c in 0..m.ncols() {
            write!(s, ",{}", m[(r, c)]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Paints every map onto the sector layout, min-max normalized over the
/// whole sequence to bytes; pixels outside the disc are 0.
pub fn render_heatmaps(maps: &[EdgMap], grid: &SectorGrid, width: usize, height: usize) -> Vec<Vec<u8>> {
    let lo = maps
        .iter()
        .flat_map(|m| m.sectors.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let hi = maps
        .iter()
        .flat_map(|m| m.sectors.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let sector_map = descriptor::sector_map(width, height, grid);
    maps.iter()
        .map(|m| {
            sector_map
                .iter()
                .map(|s| match s {
                    Some(i) if span > 0.0 => {
                        ((m.sectors[*i] - lo) / span * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
                    }
                    _ => 0,
                })
                .collect()
        })
        .collect()
}
