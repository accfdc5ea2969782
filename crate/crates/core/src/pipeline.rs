//! End-to-end configuration and the flow → descriptor → dynamics → EDG chain.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cpda::CpdaShape;
use crate::descriptor::{self, DescriptorFit, DescriptorModel, GridConfig, PcaModel, SectorGrid};
use crate::dynamics::{self, DynamicsModel, EdgMap, EnergyFrame, RbfConfig};
use crate::error::{Error, Result};
use crate::flow::{self, FlowField, FlowParams};
use crate::seed;
use crate::seqio::{self, FrameSequence, PhantomSpec, SeqIoError};

pub const DEFAULT_SEED: u64 = 7;

/// Every tunable of the pipeline; serializes to a single JSON document.
/// Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub flow: FlowParams,
    /// Dimension of the reduced descriptor `z_t`.
    pub pca_k: usize,
    pub rbf: RbfConfig,
    /// Dimension of the per-frame dynamic feature.
    pub k2: usize,
    /// Attention sizes; `channels` and `k2` are taken from the inputs at run time.
    pub cpda: CpdaShape,
    pub phantom: PhantomSpec,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            grid: GridConfig::default(),
            flow: FlowParams::default(),
            pca_k: 10,
            rbf: RbfConfig::default(),
            k2: 8,
            cpda: CpdaShape::default(),
            phantom: PhantomSpec::default(),
            input: None,
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| SeqIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.rbf.validate()?;
        if self.grid.r_bins == 0 || self.grid.theta_bins == 0 {
            return Err(Error::Config("grid needs r_bins, theta_bins ≥ 1".into()));
        }
        if self.pca_k == 0 || self.k2 == 0 {
            return Err(Error::Config("pca_k and k2 must be ≥ 1".into()));
        }
        Ok(())
    }

    /// RBF settings with the K-means seed drawn from the pipeline seed.
    pub fn resolved_rbf(&self) -> RbfConfig {
        RbfConfig {
            seed: seed::stage_seed(self.seed, seed::STAGE_KMEANS),
            ..self.rbf.clone()
        }
    }
}

/// Everything produced by [`run_edg`].
#[derive(Debug, Clone)]
pub struct EdgRun {
    pub grid: SectorGrid,
    pub flows: Vec<FlowField>,
    pub descriptors: DescriptorFit,
    pub model: DynamicsModel,
    pub energies: Vec<EnergyFrame>,
    pub edg: Vec<EdgMap>,
    /// One row per flow pair (`T−1`); the last transition-less row repeats
    /// the final energy projection.
    pub pedg: DMatrix<f64>,
    pub pedg_pca: PcaModel,
}

impl EdgRun {
    pub fn total_energy(&self) -> Vec<f64> {
        self.edg.iter().map(EdgMap::total).collect()
    }

    pub fn has_motion(&self) -> bool {
        self.edg.iter().any(|m| m.sectors.iter().any(|&v| v > 0.0))
    }
}

/// Runs flow, descriptors, dynamics training, energies, EDG and P_EDG.
pub fn run_edg(seq: &FrameSequence, cfg: &PipelineConfig) -> Result<EdgRun> {
    cfg.validate()?;
    let flows = flow::flow_sequence(seq, &cfg.flow)?;
    let grid = cfg.grid.resolve(seq.width(), seq.height());
    grid.validate(seq.width(), seq.height())?;
    let descriptors = descriptor::descriptor_sequence(seq, &flows, &grid, None, None, cfg.pca_k)?;
    let z = &descriptors.z;
    let model = dynamics::train_dynamics(z, &cfg.resolved_rbf())?;
    let energies = dynamics::energy_sequence(&model, z)?;

    let k = z.ncols();
    let edg = energies
        .iter()
        .map(|e| {
            let t = e.frame_index;
            let zt: Vec<f64> = z.row(t).iter().copied().collect();
            let dz: Vec<f64> = (0..k).map(|c| z[(t + 1, c)] - z[(t, c)]).collect();
            dynamics::edg_from_energy(e, &model, &descriptors.pca, &descriptors.scaler, &grid, &zt, &dz)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (p, pedg_pca) = dynamics::pedg_sequence(&energies, cfg.k2)?;
    let pedg = crate::cpda::align_dynamic_features(&p, flows.len())?;
    Ok(EdgRun {
        grid,
        flows,
        descriptors,
        model,
        energies,
        edg,
        pedg,
        pedg_pca,
    })
}

pub fn edg_heatmap_name(t: usize) -> String {
    format!("edg_{t:04}.pgm")
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

/// Writes heatmaps, `edg.csv`, `pedg.csv`, `model.json` and
/// `descriptor_model.json` into `dir`.
pub fn write_edg_outputs(run: &EdgRun, seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (w, h) = (seq.width(), seq.height());
    for (map, px) in run.edg.iter().zip(dynamics::render_heatmaps(&run.edg, &run.grid, w, h)) {
        seqio::write_atomic(&dir.join(edg_heatmap_name(map.frame_index)), &seqio::encode_pgm(w, h, &px))?;
    }
    seqio::write_atomic(&dir.join("edg.csv"), dynamics::edg_csv(&run.edg).as_bytes())?;
    seqio::write_atomic(&dir.join("pedg.csv"), dynamics::matrix_csv(&run.pedg, "p").as_bytes())?;
    seqio::write_atomic(&dir.join("model.json"), &json_bytes(&run.model))?;
    let dm = DescriptorModel {
        scaler: run.descriptors.scaler.clone(),
        pca: run.descriptors.pca.clone(),
    };
    seqio::write_atomic(&dir.join("descriptor_model.json"), &json_bytes(&dm))?;
    Ok(())
}

/// Reads a `t,c0,c1,…` CSV into a matrix, dropping the index column.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty CSV", path.display())))?;
    let cols = header.split(',').count().saturating_sub(1);
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').skip(1).collect();
        if fields.len() != cols {
            return Err(Error::Config(format!(
                "{}: row {i} has {} values, header has {cols}",
                path.display(),
                fields.len()
            )));
        }
        for f in fields {
            data.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: {f:?}: {e}", path.display())))?,
            );
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_takes_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 3, "rbf": {"epochs": 5}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rbf.epochs, 5);
        assert_eq!(cfg.rbf.m_centers, 16);
        assert_eq!(cfg.pca_k, 10);
        assert_eq!(cfg.grid.theta_bins, 12);
    }

    #[test]
    fn config_round_trips() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_slice(&json_bytes(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }
}
