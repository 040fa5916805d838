use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmError {
    #[error("invalid driver: {0}")]
    InvalidDriver(String),

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("CFL condition violated: sigma_bar_sq*dt/dx^2 = {ratio} > 1")]
    CflViolation { ratio: f64 },

    #[error("terminal data non-finite at x = {x}")]
    NonFiniteTerminal { x: f64 },

    #[error("query ({t}, {x}) outside the grid hull")]
    OutOfHull { t: f64, x: f64 },

    #[error("syntax error at column {col}: {msg}")]
    Parse { col: usize, msg: String },

    #[error("expression is not Lipschitz: {0}")]
    Lipschitz(String),

    #[error("arity mismatch: expression uses {expected} increments, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("grid alignment failure: {0}")]
    Alignment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GmError>;
