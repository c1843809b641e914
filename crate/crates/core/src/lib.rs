//! Phase-space Monte Carlo toolkit for purifying phase-diffused squeezed
//! light by interfering two copies on a balanced beam splitter and keeping
//! only the samples whose monitored quadrature stays inside a window.
//!
//! # Units
//!
//! All quadrature values and variances are in **shot-noise units**: the
//! vacuum state has Var(x) = Var(p) = 1 and the uncertainty relation reads
//! `Var(x) * Var(p) >= 1`. Quoted decibel values relate to this scale by
//! `V = 10^(±dB/10)`. (Texts that write vacuum variance 1/2 differ by an
//! overall factor of 2 in each variance; convert before comparing.)
//!
//! # Determinism
//!
//! Every stochastic routine takes an explicit seed and draws its randomness
//! in fixed-size chunks with per-chunk substreams, so results are
//! bit-identical for any thread count. See [`rng`] for the contract.

pub mod channels;
pub mod error;
pub mod harness;
pub mod phase_space;
pub mod protocol;
pub mod rng;
pub mod stats;
pub mod wigner;

pub use channels::{LossSpec, PhaseNoiseSpec};
pub use error::{Error, Result};
pub use harness::{
    calibrate_vp, default_calibrated_spec, run, sweep, ExperimentConfig, RunOutput, RunResult,
    StateConfig, SweepGrid, SweepParam,
};
pub use phase_space::{Ensemble, QuadPoint, SqueezedStateSpec};
pub use protocol::{
    IterationOutcome, PurifiedResult, RoundOutcome, SelectionRule, TwoModeEnsemble, TwoModeRow,
};
pub use rng::StreamSeed;
pub use stats::{CovMatrix4, QuadVariances, VarianceEstimate};
pub use wigner::{wigner_diffused_grid, wigner_sms_at, Grid2D, GridChecks, GridGeometry};
