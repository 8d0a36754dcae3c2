use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("Levy measure fails the integrability condition \\int 1 ^ |z|^2 dnu < inf: {0}")]
    NonIntegrableMeasure(String),
    #[error("truncation radius must satisfy r > 0, got {0}")]
    InvalidTruncation(f64),
    #[error("jump intensity lambda_r is zero; operation undefined")]
    DegenerateIntensity,
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("minimizing control hit the search-box boundary at node {node} (|alpha| >= {bound}); increase the control box or check coercivity")]
    UnboundedControlSearch { node: usize, bound: f64 },
    #[error("negative mass {mass:.3e} at node {node}, step {step}")]
    NegativeMass { node: usize, step: usize, mass: f64 },
    #[error("mass mismatch between measures: {0:.3e}")]
    MassMismatch(f64),
    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),
    #[error("fixed-point iteration did not converge: change {change:.3e} after {iters} iterations (tol {tol:.3e})")]
    NoConvergence { change: f64, iters: usize, tol: f64 },
    #[error("CFL ratio {name} = {value:.3} exceeds threshold {threshold:.3}; pass --force to run anyway")]
    CflViolation { name: &'static str, value: f64, threshold: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
