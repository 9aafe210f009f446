//! BFT commit engine (propose, prevote, precommit with two-thirds quorums)
//! and the deterministic simulated network it runs on.

mod explore;
mod local;
mod message;
mod node;
mod sim;
mod trace;

use std::path::Path;

use thiserror::Error;

use crate::ledger::LedgerError;

pub use explore::{explore_equivocation, ExploreReport};
pub use local::LocalNet;
pub use message::ConsensusMessage;
pub use node::{step_node, Action, Behavior, Evidence, Node, NodeInput, Step, TimeoutKey};
pub use sim::{run_many, run_simulation, Fault, FaultKind, NetworkConfig, Partition, SimOutcome};
pub use trace::{check_trace, MessageSummary, Property, Trace, TraceEvent, Verdict, Violation};

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("scenario file: {0}")]
    Scenario(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl NetworkConfig {
    /// Parses a TOML scenario. See the README for the field list.
    pub fn from_toml(text: &str) -> Result<Self, ConsensusError> {
        let config: NetworkConfig =
            toml::from_str(text).map_err(|e| ConsensusError::Scenario(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConsensusError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
