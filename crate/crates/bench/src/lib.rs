//! Shared fixtures for the benchmark suite. The benches live in
//! `benches/hotpaths.rs`; this crate only pins the states and sizes they
//! operate on so numbers stay comparable across runs.

use quadpure::{calibrate_vp, SqueezedStateSpec};

/// Samples per arm used by the ensemble-level benches: large enough to
/// exercise the chunked parallel paths, small enough for quick iterations.
pub const BENCH_SAMPLES: usize = 100_000;

/// Phase-noise width at the purification working point (radians).
pub const BENCH_SIGMA: f64 = 0.304;

/// The calibrated working-point state the simulator defaults to.
pub fn bench_spec() -> SqueezedStateSpec {
    let vp = calibrate_vp(0.4416, BENCH_SIGMA, 7.6).expect("feasible calibration");
    SqueezedStateSpec::new(0.4416, vp).expect("physical spec")
}
