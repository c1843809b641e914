//! Noise channels: Gaussian phase diffusion, band-limited phase noise, and
//! optical loss.
//!
//! Phase noise rotates each sample in phase space by its own random angle
//! (see [`crate::phase_space::rotate_point`] for the sign convention); loss
//! contracts each sample toward the origin and mixes in vacuum. All
//! stochastic channels consume their randomness through chunked substreams,
//! so outputs are bit-identical for any thread count.

use crate::error::{Error, Result};
use crate::phase_space::{rotate_point, Ensemble, QuadPoint};
use crate::rng::{combine_fingerprints, fill_chunked, map_chunked, StreamSeed};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Phase-noise model for one run.
///
/// `gaussian_iid` rotates every sample by an independent `N(0, sigma^2)`
/// angle; `bandlimited` drives the rotations with a stationary Gaussian
/// series whose spectrum is confined to `[f_lo, f_hi]` Hz at sample rate
/// `fs`, renormalized so the series' sample standard deviation is exactly
/// `sigma`. Angles are radians throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "PhaseNoiseRaw")]
pub enum PhaseNoiseSpec {
    GaussianIid {
        sigma: f64,
    },
    Bandlimited {
        sigma: f64,
        f_lo: f64,
        f_hi: f64,
        fs: f64,
    },
}

/// Raw deserialization target for [`PhaseNoiseSpec`]: a plain struct so that
/// unknown keys are rejected (serde cannot enforce `deny_unknown_fields` on
/// internally tagged enums).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseNoiseRaw {
    kind: String,
    sigma: f64,
    #[serde(default)]
    f_lo: Option<f64>,
    #[serde(default)]
    f_hi: Option<f64>,
    #[serde(default)]
    fs: Option<f64>,
}

impl TryFrom<PhaseNoiseRaw> for PhaseNoiseSpec {
    type Error = String;

    fn try_from(raw: PhaseNoiseRaw) -> std::result::Result<Self, String> {
        let spec = match raw.kind.as_str() {
            "gaussian_iid" => {
                if raw.f_lo.is_some() || raw.f_hi.is_some() || raw.fs.is_some() {
                    return Err("gaussian_iid noise takes only `sigma`".into());
                }
                PhaseNoiseSpec::GaussianIid { sigma: raw.sigma }
            }
            "bandlimited" => PhaseNoiseSpec::Bandlimited {
                sigma: raw.sigma,
                f_lo: raw.f_lo.ok_or("bandlimited noise needs `f_lo`")?,
                f_hi: raw.f_hi.ok_or("bandlimited noise needs `f_hi`")?,
                fs: raw.fs.ok_or("bandlimited noise needs `fs`")?,
            },
            other => return Err(format!("unknown noise kind `{other}`")),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl PhaseNoiseSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            PhaseNoiseSpec::GaussianIid { sigma } => sigma,
            PhaseNoiseSpec::Bandlimited { sigma, .. } => sigma,
        }
    }

    /// Same model with a different width (used by parameter sweeps).
    pub fn with_sigma(&self, sigma: f64) -> Self {
        match *self {
            PhaseNoiseSpec::GaussianIid { .. } => PhaseNoiseSpec::GaussianIid { sigma },
            PhaseNoiseSpec::Bandlimited { f_lo, f_hi, fs, .. } => PhaseNoiseSpec::Bandlimited {
                sigma,
                f_lo,
                f_hi,
                fs,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: sigma,
                reason: "phase-noise width must be finite and >= 0 (radians)",
            });
        }
        if let PhaseNoiseSpec::Bandlimited { f_lo, f_hi, fs, .. } = *self {
            check_band(f_lo, f_hi, fs)?;
        }
        Ok(())
    }
}

/// Per-arm optical transmissivities for a two-copy protocol run: even
/// pipelines (the "A" arms) take `eta_a`, odd pipelines take `eta_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub eta_a: f64,
    pub eta_b: f64,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !eta.is_finite() || eta <= 0.0 || eta > 1.0 {
                return Err(Error::InvalidParameter {
                    name,
                    value: eta,
                    reason: "transmissivity must satisfy 0 < eta <= 1",
                });
            }
        }
        Ok(())
    }
}

fn check_band(f_lo: f64, f_hi: f64, fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidBand {
            f_lo,
            f_hi,
            fs,
            reason: "sample rate must be finite and positive",
        });
    }
    if !(f_lo.is_finite() && f_hi.is_finite() && f_lo > 0.0) {
        return Err(Error::InvalidBand {
            f_lo,
            f_hi,
            fs,
            reason: "band edges must be finite with f_lo > 0",
        });
    }
    if f_hi <= f_lo {
        return Err(Error::InvalidBand {
            f_lo,
            f_hi,
            fs,
            reason: "band must satisfy f_lo < f_hi",
        });
    }
    if f_hi > fs / 2.0 {
        return Err(Error::InvalidBand {
            f_lo,
            f_hi,
            fs,
            reason: "band must stay at or below Nyquist (fs/2)",
        });
    }
    Ok(())
}

/// Rotate every sample by an independent `N(0, sigma^2)` angle.
///
/// `sigma = 0` returns the input points unchanged (bit for bit). The output
/// variances follow [`crate::phase_space::diffused_variances`].
pub fn apply_gaussian_phase_diffusion(
    ens: &Ensemble,
    sigma: f64,
    seed: StreamSeed,
) -> Result<Ensemble> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
            reason: "phase-noise width must be finite and >= 0 (radians)",
        });
    }
    let points = if sigma == 0.0 {
        ens.points().to_vec()
    } else {
        map_chunked(ens.points(), seed, |rng, &pt| {
            let z: f64 = rng.sample(StandardNormal);
            rotate_point(pt, sigma * z)
        })
    };
    let fp = combine_channel_seed(ens, seed);
    Ok(Ensemble::from_generated(
        points,
        fp,
        ens.noise_series_fingerprint(),
        format!("{} | phase_diffusion(sigma={sigma})", ens.provenance()),
    ))
}

/// Rotate sample `i` by `series[i]` (radians).
///
/// The series' fingerprint is recorded on the output so the beam splitter
/// can reject two arms that were driven by the same noise realization.
pub fn apply_phase_series(ens: &Ensemble, series: &[f64]) -> Result<Ensemble> {
    if series.len() != ens.len() {
        return Err(Error::LengthMismatch {
            left: ens.len(),
            right: series.len(),
        });
    }
    let points: Vec<QuadPoint> = ens
        .points()
        .par_iter()
        .zip(series.par_iter())
        .map(|(&pt, &phi)| rotate_point(pt, phi))
        .collect();
    let mut out = Ensemble::from_generated(
        points,
        ens.seed_fingerprint(),
        None,
        format!("{} | phase_series(n={})", ens.provenance(), series.len()),
    );
    out.set_noise_series_fingerprint(series_fingerprint(series));
    Ok(out)
}

/// Stable identity of a noise series: a hash of its length and contents.
pub fn series_fingerprint(series: &[f64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut h = mix(series.len() as u64 ^ 0x5851_f42d_4c95_7f2d);
    // Stride so long series hash in O(64) while still covering the tail.
    let stride = (series.len() / 64).max(1);
    for &v in series.iter().step_by(stride) {
        h = mix(h ^ v.to_bits());
    }
    if let Some(&last) = series.last() {
        h = mix(h ^ last.to_bits());
    }
    h
}

/// Band-limited Gaussian phase-noise series.
///
/// White Gaussian noise is masked in the frequency domain to
/// `f_lo <= |f| <= f_hi`, transformed back, mean-subtracted, and rescaled so
/// the sample standard deviation is exactly `sigma`. Band geometry is
/// validated regardless of `sigma` — it fails if no DFT bin falls inside the
/// band (series too short for the requested resolution) — and only then does
/// `sigma = 0` short-circuit to a vector of zeros.
pub fn bandlimited_phase_series(
    n: usize,
    fs: f64,
    band: (f64, f64),
    sigma: f64,
    seed: StreamSeed,
) -> Result<Vec<f64>> {
    let (f_lo, f_hi) = band;
    check_band(f_lo, f_hi, fs)?;
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
            reason: "series std must be finite and >= 0",
        });
    }
    if n < 4 {
        return Err(Error::InsufficientSamples {
            context: "bandlimited_phase_series",
            needed: 4,
            got: n,
        });
    }
    let df = fs / n as f64;
    let k_lo = (f_lo / df).ceil() as usize;
    let k_hi = (f_hi / df).floor() as usize;
    if k_lo > k_hi || k_lo == 0 || k_hi > n / 2 {
        return Err(Error::InvalidBand {
            f_lo,
            f_hi,
            fs,
            reason: "no DFT bin falls inside the band; increase n or widen the band",
        });
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let white = fill_chunked(n, seed, |rng, _| {
        let z: f64 = rng.sample(StandardNormal);
        Complex::new(z, 0.0)
    });
    let mut buf = white;
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        // Two-sided mask: bin k carries frequency min(k, n-k) * fs / n.
        let kf = k.min(n - k);
        if !(k_lo..=k_hi).contains(&kf) {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let mut series: Vec<f64> = buf.into_iter().map(|c| c.re * scale).collect();

    let mean = series.iter().sum::<f64>() / n as f64;
    for v in series.iter_mut() {
        *v -= mean;
    }
    let var = series.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::DegenerateVariance {
            context: "bandlimited_phase_series: masked spectrum vanished",
        });
    }
    let gain = sigma / var.sqrt();
    for v in series.iter_mut() {
        *v *= gain;
    }
    Ok(series)
}

/// Optical loss of transmissivity `eta`: each sample becomes
/// `sqrt(eta) * pt + sqrt(1 - eta) * vacuum`, taking quadrature variances
/// `V` to `eta V + (1 - eta)`. `eta = 1` is the identity (bit for bit).
pub fn apply_loss(ens: &Ensemble, eta: f64, seed: StreamSeed) -> Result<Ensemble> {
    if !eta.is_finite() || eta <= 0.0 || eta > 1.0 {
        return Err(Error::InvalidParameter {
            name: "eta",
            value: eta,
            reason: "transmissivity must satisfy 0 < eta <= 1",
        });
    }
    let points = if eta == 1.0 {
        ens.points().to_vec()
    } else {
        let t = eta.sqrt();
        let r = (1.0 - eta).sqrt();
        map_chunked(ens.points(), seed, |rng, &pt| {
            let zx: f64 = rng.sample(StandardNormal);
            let zp: f64 = rng.sample(StandardNormal);
            QuadPoint {
                x: t * pt.x + r * zx,
                p: t * pt.p + r * zp,
            }
        })
    };
    let fp = combine_channel_seed(ens, seed);
    Ok(Ensemble::from_generated(
        points,
        fp,
        ens.noise_series_fingerprint(),
        format!("{} | loss(eta={eta})", ens.provenance()),
    ))
}

/// Identity of an ensemble after a stochastic channel: its generation seed
/// combined with the channel's seed (manual ensembles adopt the channel's).
fn combine_channel_seed(ens: &Ensemble, seed: StreamSeed) -> Option<u64> {
    Some(match ens.seed_fingerprint() {
        Some(fp) => combine_fingerprints(fp, seed.fingerprint()),
        None => seed.fingerprint(),
    })
}
