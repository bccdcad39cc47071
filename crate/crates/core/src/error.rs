use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("edge set is not symmetric: ({from}, {to}) has no reverse edge")]
    AsymmetricEdges { from: usize, to: usize },
    #[error("agent {agent} selected entry {index}, but only {k} entries exist")]
    SelectionOutOfRange { agent: usize, index: usize, k: usize },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("infeasible sizes: {0}")]
    InfeasibleSizes(String),
    #[error("feature condition violated: {0}")]
    InvalidFeatures(String),
    #[error("step size {0} outside (0, 1]")]
    InvalidStepSize(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("chain is reducible")]
    Reducible,
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("push-sum weight underflow at iteration {t}: y[{agent}][{entry}] = {value:e}")]
    WeightUnderflow {
        t: u64,
        agent: usize,
        entry: usize,
        value: f64,
    },
    #[error("non-finite value encountered at iteration {t}")]
    NonFinite { t: u64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that come from numerical breakdown during a run rather
    /// than from bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::WeightUnderflow { .. } | Error::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
