use thiserror::Error;

/// Errors raised across the simulation, quadrature and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what} at probe {probe:?}")]
    NonFiniteAtProbe { what: &'static str, probe: Vec<f64> },

    #[error("model not positive recurrent on support")]
    NotPositiveRecurrent,

    #[error("f not π-integrable")]
    NotIntegrable,

    #[error("Feller condition violated: kappa*mu = {kappa_mu} < sigma^2/2 = {half_sigma_sq}")]
    FellerViolated { kappa_mu: f64, half_sigma_sq: f64 },

    #[error("trajectory exploded at step {step} (|z| = {norm:e})")]
    TrajectoryExploded { step: u64, norm: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("fewer than 3 grid points survived ({0} left)")]
    GridTooSmall(usize),

    #[error("grid too narrow for requested tolerance (tail {tail:e} vs bulk {bulk:e})")]
    GridTooNarrow { tail: f64, bulk: f64 },

    #[error("horizon S too short: autocorrelation tail ratio {ratio:.4} exceeds 1%")]
    HorizonTooShort { ratio: f64 },

    #[error("degenerate covariance; rate undefined (min eigenvalue {min_eigenvalue:e})")]
    DegenerateCovariance { min_eigenvalue: f64 },

    #[error("need ≥ 3 epsilons for slope fit, got {0}")]
    TooFewEpsilons(usize),

    #[error("{failed} of {total} replicates failed at epsilon {epsilon} (limit 1%): {first}")]
    TooManyFailures {
        epsilon: f64,
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("control violates its L2 bound: ∫|ψ|² = {norm} > M = {bound}")]
    ControlBound { norm: f64, bound: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
