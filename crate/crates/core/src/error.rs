use thiserror::Error;

/// Errors raised across the laboratory. The CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("backend mismatch: {0}")]
    BackendMismatch(&'static str),
    #[error("logarithm on the branch cut: {0}")]
    BranchCut(String),
    #[error("combinatorial enumeration limited to n, d <= 12 (got n={n}, d={d})")]
    SizeLimit { n: usize, d: usize },
    #[error("stabilizer is infinite on support {support:?}")]
    NotLocallyFree { support: Vec<usize> },
    #[error("level set is not regular: weight columns on support {support:?} do not span")]
    NotRegular { support: Vec<usize> },
    #[error("point lies outside the tubular neighbourhood (distance {distance:.3e} >= {epsilon:.3e})")]
    OutsideTube { distance: f64, epsilon: f64 },
    #[error("Newton iteration did not converge after {iterations} iterations (defect {defect:.3e})")]
    NewtonDiverged { iterations: usize, defect: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field is not in temporal gauge")]
    NotTemporal,
    #[error("solver did not converge (final residual {final_residual:.3e} after {} iterations)", history.len())]
    NonConvergence { history: Vec<f64>, final_residual: f64 },
    #[error("loop is not near the critical set: {0}")]
    NotNearCritical(String),
    #[error("holonomy is equidistant from two stabilizer elements")]
    AmbiguousStabilizer,
    #[error("no admissible fit window: {0}")]
    NoWindow(String),
    #[error("shooting failed: {0}")]
    ShootingFailed(String),
    #[error("integration step underflow at t = {t:.6}")]
    StiffnessAbort { t: f64 },
    #[error("range mismatch: {0}")]
    RangeMismatch(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. }
            | Error::ShootingFailed(_)
            | Error::StiffnessAbort { .. }
            | Error::NewtonDiverged { .. } => 2,
            Error::Config(_) | Error::Parse(_) => 3,
            Error::Io(_) => 1,
            _ => 4,
        }
    }
}
