//! Amplify-and-forward relay networks: graph families, half-duplex activation
//! schedules, the induced linear channel, exact DMT curve algebra and Monte
//! Carlo outage estimation.

pub mod channel;
pub mod dmt;
pub mod montecarlo;
pub mod netgraph;
pub mod protocol;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("sink is not reachable from the source")]
    UnreachableSink,
    #[error("network is not layered")]
    NotLayered,
    #[error("network is not fully connected layered")]
    NotFullyConnected,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("inconsistent fractions: {0}")]
    InconsistentFractions(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("schedule does not match network: {0}")]
    ScheduleMismatch(String),
    #[error("half-duplex violation: node {node} sends and receives in slot {slot}")]
    HalfDuplexViolation { node: String, slot: usize },
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("search exhausted: {0}")]
    SearchExhausted(String),
    #[error("no complete matching: {0}")]
    NoMatching(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}
