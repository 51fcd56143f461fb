use thiserror::Error;

use crate::driver::IterationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("unsupported S_N order {order}; supported orders are {supported:?}")]
    UnsupportedOrder { order: usize, supported: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular local transport system in element {element} for direction {direction}")]
    SingularLocalSystem { element: usize, direction: usize },

    #[error("singular current block in element {element}")]
    SingularBlock { element: usize },

    #[error("zero pivot at row {row} during sparse factorization")]
    SingularPivot { row: usize },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64, best: Vec<f64> },

    #[error("outer iteration did not converge in {iterations} iterations (last relative change {last_change:.3e})")]
    OuterNotConverged { iterations: usize, last_change: f64, history: Vec<IterationRecord> },

    #[error("low-order solve failed at outer iteration {iteration}: {source}")]
    InnerFailure { iteration: usize, source: Box<Error>, history: Vec<IterationRecord> },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
