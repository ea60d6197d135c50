use thiserror::Error;

use crate::model::{Episode, LaneletId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unresolved lanelet id {0}")]
    UnresolvedLanelet(LaneletId),
    #[error("route is not connected: lanelet {to} is not a successor of {from}")]
    DisconnectedRoute { from: LaneletId, to: LaneletId },
    #[error("empty route")]
    EmptyRoute,
    #[error("intensity must be >= 0, got {0}")]
    NegativeIntensity(f64),
    #[error("unknown {what}: {name:?}")]
    UnknownName { what: &'static str, name: String },
    #[error("dataset must contain at least one episode")]
    EmptyDataset,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("unknown agent index {0}")]
    UnknownAgent(usize),
    #[error("agent {agent}: {source}")]
    Model {
        agent: String,
        #[source]
        source: ModelError,
    },
    #[error("policy of agent {agent} failed at step {step}: {message}")]
    Policy {
        agent: String,
        step: usize,
        message: String,
    },
    #[error("invalid setup: {0}")]
    Setup(String),
}

/// A failed run together with everything simulated before the failure.
#[derive(Debug, Clone, Error)]
#[error("simulation failed after {} steps: {error}", partial.horizon)]
pub struct SimFailure {
    pub error: SimError,
    pub partial: Box<Episode>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("xml error at {line}:{column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("{element}: {source}")]
    Semantic {
        element: String,
        #[source]
        source: ModelError,
    },
    #[error("input is not valid UTF-8 at byte {0}")]
    Encoding(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarginError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "unusable probability point at intensity {intensity}: {failures} of {reps} reps failed ({last_error})"
    )]
    Unusable {
        intensity: f64,
        failures: usize,
        reps: usize,
        last_error: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("every best-response rollout failed: {0}")]
    AllRolloutsFailed(String),
    #[error("best response needs a colliding non-reactive anchor")]
    NoAnchor,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no results to aggregate")]
    Empty,
    #[error("mixed {0} across results")]
    Mixed(&'static str),
    #[error("weights: {0}")]
    Weights(String),
}
