use thiserror::Error;

use crate::cpda::CpdaError;
use crate::descriptor::DescriptorError;
use crate::dynamics::DynamicsError;
use crate::flow::FlowError;
use crate::metrics::MetricsError;
use crate::seqio::SeqIoError;

/// Pipeline-level error; each variant carries the failing stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("seqio: {0}")]
    SeqIo(#[from] SeqIoError),
    #[error("flow: {0}")]
    Flow(#[from] FlowError),
    #[error("descriptor: {0}")]
    Descriptor(#[from] DescriptorError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("cpda: {0}")]
    Cpda(#[from] CpdaError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
