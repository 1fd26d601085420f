use thiserror::Error;

use crate::scenario::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid scenario: {} violation(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidScenario(Vec<Violation>),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("corrupt size table: {0}")]
    CorruptTable(String),

    #[error("MDU {0} cannot be predicted from itself")]
    SelfPrediction(usize),

    #[error("infeasible structure: MDU {0} has no independent reconstruction")]
    Infeasible(usize),

    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("policy has no action for state {0}")]
    PolicyGap(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
