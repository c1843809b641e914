use thiserror::Error;

/// Unified error type for the simulator.
///
/// Every variant carries enough context to diagnose the failing call without
/// a debugger; [`Error::kind`] exposes a stable machine-readable tag that the
/// CLI embeds in its JSON error output.
#[derive(Debug, Error)]
pub enum Error {
    /// A state specification violates positivity or the uncertainty bound
    /// `vx * vp >= 1` (shot-noise units).
    #[error("invalid state spec: vx={vx}, vp={vp}: {reason}")]
    InvalidSpec {
        vx: f64,
        vp: f64,
        reason: &'static str,
    },

    /// A scalar argument is outside its documented domain.
    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// An operation that needs samples received an empty ensemble.
    #[error("empty ensemble: {context}")]
    EmptyEnsemble { context: &'static str },

    /// Paired ensembles must have the same length.
    #[error("ensemble length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// The two beam-splitter inputs were generated from the same seed, so
    /// they are the same samples, not independent copies.
    #[error("beam splitter inputs share generation seed {fingerprint:#018x}; copies must be independent")]
    IdenticalSeeds { fingerprint: u64 },

    /// The two beam-splitter inputs were rotated by the same phase-noise
    /// series, so their noise is common-mode rather than independent.
    #[error("beam splitter inputs share phase-noise series {fingerprint:#018x}; arms need independent noise")]
    SharedNoiseSeries { fingerprint: u64 },

    /// Conditioning kept zero samples.
    #[error("selection |x_I| <= {threshold} kept no samples")]
    EmptySelection { threshold: f64 },

    /// An iteration round ran out of survivors.
    #[error("survivor starvation in round {round}: {survivors} survivors remain")]
    SurvivorStarvation { round: usize, survivors: usize },

    /// Not enough samples for the requested estimator.
    #[error("{context}: needs at least {needed} samples, got {got}")]
    InsufficientSamples {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    /// Samples are constant; a zero-variance ensemble is unphysical in
    /// shot-noise units and breaks every downstream normalization.
    #[error("degenerate (zero-variance) samples: {context}")]
    DegenerateVariance { context: &'static str },

    /// A histogram bin's expected count fell below the chi-square validity
    /// floor.
    #[error("chi-square bin {bin} expects only {expected:.2} counts (< {floor}); use fewer bins or more samples")]
    SparseBins {
        bin: usize,
        expected: f64,
        floor: f64,
    },

    /// A covariance matrix fails the physicality bound (smallest symplectic
    /// eigenvalue >= 1 within Monte Carlo tolerance).
    #[error("unphysical covariance: smallest symplectic eigenvalue {nu_min} < 1 - {tolerance}")]
    UnphysicalCovariance { nu_min: f64, tolerance: f64 },

    /// Root-finding cannot reach the requested target on the valid branch.
    #[error("infeasible calibration: no vp >= vx={vx} reaches diffused product {target} (minimum attainable {minimum})")]
    InfeasibleCalibration { vx: f64, target: f64, minimum: f64 },

    /// A frequency band is empty, inverted, or above Nyquist.
    #[error("invalid band [{f_lo}, {f_hi}] Hz at fs={fs} Hz: {reason}")]
    InvalidBand {
        f_lo: f64,
        f_hi: f64,
        fs: f64,
        reason: &'static str,
    },

    /// Grid geometry is malformed or too small for the state it must hold.
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },

    /// Configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for this error, used by the CLI's JSON
    /// error channel.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec { .. } => "invalid_spec",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::EmptyEnsemble { .. } => "empty_ensemble",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::IdenticalSeeds { .. } => "identical_seeds",
            Error::SharedNoiseSeries { .. } => "shared_noise_series",
            Error::EmptySelection { .. } => "empty_selection",
            Error::SurvivorStarvation { .. } => "survivor_starvation",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::DegenerateVariance { .. } => "degenerate_variance",
            Error::SparseBins { .. } => "sparse_bins",
            Error::UnphysicalCovariance { .. } => "unphysical_covariance",
            Error::InfeasibleCalibration { .. } => "infeasible_calibration",
            Error::InvalidBand { .. } => "invalid_band",
            Error::InvalidGrid { .. } => "invalid_grid",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
