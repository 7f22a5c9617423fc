//! Experiment harness: config parsing, the federated round loop, output
//! emission and the small standalone reports behind the CLI.

mod config;
mod report;
mod run;
mod toy;

use thiserror::Error;

use crate::client::ClientError;
use crate::gnn::ModelError;
use crate::graph::GraphError;
use crate::server::ServerError;

pub use config::{
    regulation_name, ClientSettings, ConfigError, Dataset, ModelSettings, Regime, RunConfig, SourceConfig,
    TrainerKind,
};
pub use report::{partition_report, PartitionReport, PartitionRow};
pub use run::{
    run_experiment, write_outputs, ExcludedClient, Federation, RegulationRecord, RoundOutput, RunResult, SeedResult,
    VariantResult, FINAL_WINDOW, METRICS_HEADER,
};
pub use toy::{toy_appendix, ToyReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("server: {0}")]
    Server(ServerError),
    #[error("client: {0}")]
    Client(ClientError),
    #[error("numerical divergence at round {round}{}", client.map(|c| format!(" on client {c}")).unwrap_or_default())]
    Divergence { round: usize, client: Option<usize> },
    #[error("invariant violated at round {round}: {msg}")]
    Invariant { round: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit status: 1 for configuration and I/O problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Divergence { .. } | HarnessError::Invariant { .. } => 2,
            _ => 1,
        }
    }
}
