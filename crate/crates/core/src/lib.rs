//! Dynamic-learning features for echocardiogram-like frame sequences.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`seqio`]: frame/mask sequence I/O (PGM directories, `.eds` containers)
//!   and a synthetic beating-heart phantom with ground-truth masks.
//! - [`flow`]: dense Horn–Schunck optical flow between consecutive frames.
//! - [`descriptor`]: polar-sector pooling of flow and intensity, followed by
//!   standardization and PCA.
//! - [`dynamics`]: K-means-centered Gaussian RBF model of the one-step
//!   descriptor dynamics, residual-weighted energies, echo-dynamics graphs
//!   (EDG) and their secondary PCA reduction (P_EDG).
//! - [`cpda`]: forward-only phase/dynamics attention that modulates a
//!   stacked feature clip.
//! - [`metrics`]: Dice, HD95 and temporal consistency of Dice.
//! - [`pipeline`]: configuration and end-to-end orchestration used by the
//!   `echodyn` binary ([`cli`]).

pub mod cpda;
pub mod descriptor;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod plane;
pub mod seed;
pub mod seqio;

pub mod cli;

pub use error::{Error, Result};
pub use plane::{LabelMap, Plane};
