use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("configuration has {got} units, network has {expected} nodes")]
    ConfigLength { expected: usize, got: usize },

    #[error("invalid configuration string {0:?}: expected only 'M' and 'C'")]
    ConfigSyntax(String),

    #[error("power imbalance {0:e} exceeds tolerance; no flow solution on a tree")]
    Imbalance(f64),

    #[error("susceptance drop {delta} outside [0, {limit})")]
    DeltaOutOfRange { delta: f64, limit: f64 },

    #[error("network has {nodes} nodes, limit for this operation is {limit}")]
    SizeGuard { nodes: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration already outside the feasibility region at delta = 0 (max deviation {max_deviation} >= alpha {alpha})")]
    OutsideRegion { max_deviation: f64, alpha: f64 },

    #[error("no configuration reproduces the targets (best mismatch {0} rad)")]
    NoMatch(f64),

    #[error("transition matrix is reducible; stationary distribution is not unique")]
    Reducible,
}
