use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid jump {index}: {reason}")]
    InvalidJump { index: usize, reason: String },

    #[error("swap from site {site} along jump {jump} is not admissible: {reason}")]
    InvalidSwap {
        site: usize,
        jump: usize,
        reason: &'static str,
    },

    #[error("level {level} out of range 0..={n}")]
    LevelOutOfRange { level: usize, n: usize },

    #[error("dense function has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("{what} needs {size} entries, above the configured guard of {limit}")]
    SizeGuard {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("least squares did not converge in {iterations} iterations (relative residual {relative_residual:e})")]
    LsqNotConverged {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("level matrix {level} is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { level: usize, eigenvalue: f64 },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("Newton did not converge in {iterations} iterations (residual history {history:?})")]
    NewtonNotConverged {
        iterations: usize,
        history: Vec<f64>,
        best: Vec<f64>,
    },

    #[error("time step {step} (t = {time}) failed: {source}")]
    TimeStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("expression `{expr}`: {reason}")]
    Expression { expr: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
