use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge (achieved error estimate {achieved:e}, requested {requested:e})")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("true bin {index} has zero ansatz mass")]
    DegenerateBin { index: usize },

    #[error("covariance entry {index} is not positive ({value})")]
    Covariance { index: usize, value: f64 },

    #[error("response matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("no coverage-certifying decision rule exists for functional `{0}`")]
    NoFeasibleRule(String),

    #[error("feasible region is empty: radius² {radius2} is below the minimum residual s² = {s2}")]
    InfeasibleRegion { radius2: f64, s2: f64 },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::Solver(_)
                | Error::NoFeasibleRule(_)
                | Error::InfeasibleRegion { .. }
                | Error::RankDeficient { .. }
                | Error::DegenerateBin { .. }
        )
    }
}
