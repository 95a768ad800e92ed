use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian (residual {residual:.3e} exceeds {tol:.1e})")]
    NotHermitian { residual: f64, tol: f64 },

    #[error(
        "degenerate exciton levels {a} and {b} (gap {gap_cm1:.3e} cm^-1): \
         secular rates are ill-defined"
    )]
    DegenerateSpectrum { a: usize, b: usize, gap_cm1: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incompatible unit conversion: {from} -> {to}")]
    UnitConversion { from: &'static str, to: &'static str },

    #[error("integration failed at t = {t:.3} fs: {reason}")]
    Integration { t: f64, reason: String },

    #[error(
        "generator is singular or near-singular (rcond {rcond:.3e}); \
         null direction dominated by {direction}"
    )]
    SingularGenerator { rcond: f64, direction: String },

    #[error("hierarchy would need {required} bytes, over the {budget} byte budget")]
    MemoryBudget { required: u128, budget: u128 },

    #[error(
        "high-temperature bath expansion invalid (beta*hbar*gamma = {betagamma:.3}): \
         add Matsubara modes or pass the override flag"
    )]
    HighTemperatureViolation { betagamma: f64 },

    #[error("linear algebra backend: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("trajectory file: {0}")]
    Trajectory(String),

    #[error("ensemble needs at least {min} instances, got {got}")]
    EnsembleTooSmall { min: usize, got: usize },

    #[error("trace cutoff {cutoff:.1e} not reached within {horizon_fs:.0} fs (trace {trace:.3e})")]
    CutoffNotReached { cutoff: f64, horizon_fs: f64, trace: f64 },

    #[error("rank-deficient inversion; undetermined directions: {0}")]
    RankDeficient(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
