use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("polytope or program is unbounded")]
    Unbounded,
    #[error("cone has no strictly interior point with a full-dimensional polytope")]
    NoInteriorPoint,
    #[error("degenerate vertex: active rows have rank {rank} < {dim}")]
    DegenerateVertex { rank: usize, dim: usize },
    #[error("sensor partition mismatch: {0}")]
    PartitionMismatch(String),
    #[error("meta cone violated by {0:e}")]
    ConeViolation(f64),
    #[error("information ensemble is empty")]
    EmptyEnsemble,
    #[error("ensembles use different meta templates")]
    TemplateMismatch,
    #[error("cost is not convex: {0}")]
    NonConvexCost(String),
    #[error("problem is infeasible: {0}")]
    Infeasible(String),
    #[error("no admissible extreme weights (shortfall {0:e})")]
    InfeasibleWeights(f64),
    #[error("information set became empty")]
    EmptyInformationSet,
    #[error("template consistency check failed: {0}")]
    Consistency(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o or format error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn dim_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(what()))
    }
}
