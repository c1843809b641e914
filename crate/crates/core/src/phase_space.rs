//! Quadrature phase-space states and ensembles.
//!
//! All variances are in shot-noise units: the vacuum state has variance 1 in
//! both quadratures, so the uncertainty bound reads `vx * vp >= 1` and any
//! quadrature variance below 1 is squeezing. Decibel values are relative to
//! shot noise: `db_of(v) = 10 log10(v)`, so squeezing of 3.55 dB means
//! `vx = 10^(-0.355) ≈ 0.4416`.

use crate::error::{Error, Result};
use crate::rng::{fill_chunked, StreamSeed};
use rand::Rng;
use rand_distr::StandardNormal;

/// Slack allowed on the uncertainty bound `vx * vp >= 1` so that specs built
/// from rounded decibel values are not rejected for float dust.
const HEISENBERG_SLACK: f64 = 1e-9;

/// One phase-space sample `(x, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: f64,
    pub p: f64,
}

/// Quadrature variances of a (generally mixed) squeezed Gaussian state.
///
/// Constructors enforce positivity and the uncertainty bound; the fields are
/// read-only afterwards so a constructed spec is always physical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedStateSpec {
    vx: f64,
    vp: f64,
}

impl SqueezedStateSpec {
    /// Build a spec from raw variances in shot-noise units.
    pub fn new(vx: f64, vp: f64) -> Result<Self> {
        if !vx.is_finite() || vx <= 0.0 {
            return Err(Error::InvalidSpec {
                vx,
                vp,
                reason: "vx must be finite and positive",
            });
        }
        if !vp.is_finite() || vp <= 0.0 {
            return Err(Error::InvalidSpec {
                vx,
                vp,
                reason: "vp must be finite and positive",
            });
        }
        if vx * vp < 1.0 - HEISENBERG_SLACK {
            return Err(Error::InvalidSpec {
                vx,
                vp,
                reason: "vx * vp violates the uncertainty bound (>= 1 in shot-noise units)",
            });
        }
        Ok(SqueezedStateSpec { vx, vp })
    }

    /// Squeezed-quadrature variance.
    pub fn vx(&self) -> f64 {
        self.vx
    }

    /// Anti-squeezed-quadrature variance.
    pub fn vp(&self) -> f64 {
        self.vp
    }

    /// The vacuum state: unit variance in both quadratures.
    pub fn vacuum() -> Self {
        SqueezedStateSpec { vx: 1.0, vp: 1.0 }
    }
}

/// Build a spec from decibel amounts relative to shot noise.
///
/// `squeeze_db >= 0` is the suppression of the x quadrature
/// (`vx = 10^(-squeeze_db/10)`), `antisqueeze_db >= 0` the excess of the p
/// quadrature (`vp = 10^(antisqueeze_db/10)`). Rejects negative amounts and
/// pairs that would violate the uncertainty bound.
pub fn spec_from_db(squeeze_db: f64, antisqueeze_db: f64) -> Result<SqueezedStateSpec> {
    if !squeeze_db.is_finite() || squeeze_db < 0.0 {
        return Err(Error::InvalidParameter {
            name: "squeeze_db",
            value: squeeze_db,
            reason: "must be finite and >= 0 (dB below shot noise)",
        });
    }
    if !antisqueeze_db.is_finite() || antisqueeze_db < 0.0 {
        return Err(Error::InvalidParameter {
            name: "antisqueeze_db",
            value: antisqueeze_db,
            reason: "must be finite and >= 0 (dB above shot noise)",
        });
    }
    SqueezedStateSpec::new(
        10f64.powf(-squeeze_db / 10.0),
        10f64.powf(antisqueeze_db / 10.0),
    )
}

/// Signed decibel value of a variance relative to shot noise.
///
/// # Panics
/// Panics if `variance` is not finite and positive; variances in this crate
/// are always strictly positive by construction.
pub fn db_of(variance: f64) -> f64 {
    assert!(
        variance.is_finite() && variance > 0.0,
        "db_of needs a positive finite variance, got {variance}"
    );
    10.0 * variance.log10()
}

/// Rotate a point in phase space:
/// `x' = x cos φ + p sin φ`, `p' = p cos φ − x sin φ`.
///
/// This is the convention used by the phase-diffusion channel; a positive
/// angle moves the anti-squeezed quadrature into x.
pub fn rotate_point(pt: QuadPoint, phi: f64) -> QuadPoint {
    let (s, c) = phi.sin_cos();
    QuadPoint {
        x: pt.x * c + pt.p * s,
        p: pt.p * c - pt.x * s,
    }
}

/// Closed-form quadrature variances after Gaussian phase diffusion of width
/// `sigma` (radians): with `k = exp(-2 sigma^2)`,
///
/// ```text
/// vx' = (vx (1 + k) + vp (1 - k)) / 2
/// vp' = (vp (1 + k) + vx (1 - k)) / 2
/// ```
///
/// The sum `vx' + vp'` equals `vx + vp` (the channel only redistributes
/// variance between the quadratures), and as `sigma → ∞` both tend to the
/// fully dephased value `(vx + vp) / 2`.
pub fn diffused_variances(spec: &SqueezedStateSpec, sigma: f64) -> (f64, f64) {
    let k = (-2.0 * sigma * sigma).exp();
    let vx = spec.vx();
    let vp = spec.vp();
    (
        (vx * (1.0 + k) + vp * (1.0 - k)) / 2.0,
        (vp * (1.0 + k) + vx * (1.0 - k)) / 2.0,
    )
}

/// A sampled ensemble of phase-space points.
///
/// Carries the seed fingerprint of its generation stream (so downstream code
/// can reject accidentally shared seeds) and a human-readable provenance
/// trail of the channels it passed through. Regenerating with the same spec,
/// size, and seed yields a bit-identical point list.
#[derive(Debug, Clone)]
pub struct Ensemble {
    points: Vec<QuadPoint>,
    seed: Option<u64>,
    noise_series: Option<u64>,
    provenance: String,
}

impl Ensemble {
    /// Wrap externally produced points (tests, file input). Such ensembles
    /// carry no seed fingerprint and are exempt from shared-seed rejection.
    pub fn from_points(points: Vec<QuadPoint>, provenance: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyEnsemble {
                context: "Ensemble::from_points",
            });
        }
        Ok(Ensemble {
            points,
            seed: None,
            noise_series: None,
            provenance: provenance.into(),
        })
    }

    pub(crate) fn from_generated(
        points: Vec<QuadPoint>,
        seed: Option<u64>,
        noise_series: Option<u64>,
        provenance: String,
    ) -> Self {
        debug_assert!(!points.is_empty());
        Ensemble {
            points,
            seed,
            noise_series,
            provenance,
        }
    }

    pub fn points(&self) -> &[QuadPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fingerprint of the generation seed, if RNG-generated.
    pub fn seed_fingerprint(&self) -> Option<u64> {
        self.seed
    }

    /// Fingerprint of a phase-noise series applied to this ensemble, if any.
    pub fn noise_series_fingerprint(&self) -> Option<u64> {
        self.noise_series
    }

    pub(crate) fn set_noise_series_fingerprint(&mut self, fp: u64) {
        self.noise_series = Some(fp);
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Copy of the x column.
    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.x).collect()
    }

    /// Copy of the p column.
    pub fn ps(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.p).collect()
    }
}

/// Draw `n` independent samples of the Gaussian state `spec`.
///
/// Each point consumes exactly two standard normals (x first, then p) from
/// its chunk's substream, so the ensemble is reproducible bit-for-bit from
/// `(spec, n, seed)` for any thread count.
pub fn sample_squeezed(spec: &SqueezedStateSpec, n: usize, seed: StreamSeed) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::EmptyEnsemble {
            context: "sample_squeezed(n = 0)",
        });
    }
    let sx = spec.vx().sqrt();
    let sp = spec.vp().sqrt();
    let points = fill_chunked(n, seed, |rng, _| {
        let zx: f64 = rng.sample(StandardNormal);
        let zp: f64 = rng.sample(StandardNormal);
        QuadPoint {
            x: sx * zx,
            p: sp * zp,
        }
    });
    Ok(Ensemble::from_generated(
        points,
        Some(seed.fingerprint()),
        None,
        format!("squeezed(vx={}, vp={})", spec.vx(), spec.vp()),
    ))
}
