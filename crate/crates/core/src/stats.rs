//! Estimators for the simulation outputs: variances with standard errors,
//! excess kurtosis, Gaussianity chi-square, bootstrap standard errors, and
//! the two-mode covariance / logarithmic negativity pair.
//!
//! All sample reductions run chunked: fixed-size chunks are accumulated
//! independently (in parallel) and merged in a fixed pairwise order, so the
//! result is bit-identical regardless of thread count and numerically
//! stable at millions of samples.

use crate::error::{Error, Result};
use crate::protocol::TwoModeEnsemble;
use crate::rng::{StreamSeed, CHUNK};
use rand::Rng;
use rayon::prelude::*;

/// Default resample count for bootstrap standard errors.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// Minimum expected count per chi-square bin.
const CHI2_EXPECTED_FLOOR: f64 = 20.0;

/// Running central moments up to fourth order (Welford/Chan form).
///
/// `merge` implements the parallel update, exact in infinite precision, so
/// chunked accumulation reproduces the one-pass result to rounding error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0 {
            return b;
        }
        if b.n == 0 {
            return a;
        }
        let na = a.n as f64;
        let nb = b.n as f64;
        let n = na + nb;
        let delta = b.mean - a.mean;
        let d2 = delta * delta;
        Moments {
            n: a.n + b.n,
            mean: a.mean + delta * nb / n,
            m2: a.m2 + b.m2 + d2 * na * nb / n,
            m3: a.m3
                + b.m3
                + delta * d2 * na * nb * (na - nb) / (n * n)
                + 3.0 * delta * (na * b.m2 - nb * a.m2) / n,
            m4: a.m4
                + b.m4
                + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
                + 6.0 * d2 * (na * na * b.m2 + nb * nb * a.m2) / (n * n)
                + 4.0 * delta * (na * b.m3 - nb * a.m3) / n,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (divides by `n - 1`).
    pub fn variance(&self) -> f64 {
        self.m2 / (self.n as f64 - 1.0)
    }

    /// k-th central moment with 1/n normalization, k in 2..=4.
    pub fn central(&self, k: usize) -> f64 {
        let n = self.n as f64;
        match k {
            2 => self.m2 / n,
            3 => self.m3 / n,
            4 => self.m4 / n,
            _ => panic!("central moment order {k} unsupported"),
        }
    }
}

/// Accumulate moments of `samples`, chunked and merged in fixed order so the
/// result does not depend on the rayon pool size.
pub fn moments(samples: &[f64]) -> Moments {
    let mut parts: Vec<Moments> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut m = Moments::default();
            for &x in chunk {
                m.push(x);
            }
            m
        })
        .collect();
    if parts.is_empty() {
        return Moments::default();
    }
    // Pairwise tree reduction in index order: deterministic and stable.
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|pair| {
                if pair.len() == 2 {
                    Moments::merge(pair[0], pair[1])
                } else {
                    pair[0]
                }
            })
            .collect();
    }
    parts[0]
}

/// An unbiased variance estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    /// Gaussian-theory standard error `value * sqrt(2 / (n - 1))`. For
    /// markedly non-Gaussian samples prefer [`bootstrap_variance_se`].
    pub std_error: f64,
    pub n: usize,
}

/// Variance estimates for both quadratures of one mode.
#[derive(Debug, Clone, Copy)]
pub struct QuadVariances {
    pub x: VarianceEstimate,
    pub p: VarianceEstimate,
}

/// Unbiased sample variance with the Gaussian-theory standard error.
///
/// Rejects fewer than two samples, non-finite samples, and constant samples
/// (zero variance cannot occur for physical quadrature data and would break
/// downstream normalizations).
pub fn variance_with_se(samples: &[f64]) -> Result<VarianceEstimate> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            context: "variance_with_se",
            needed: 2,
            got: samples.len(),
        });
    }
    let m = moments(samples);
    let value = m.variance();
    if !value.is_finite() {
        return Err(Error::InvalidParameter {
            name: "samples",
            value,
            reason: "samples contain non-finite values",
        });
    }
    if value == 0.0 {
        return Err(Error::DegenerateVariance {
            context: "variance_with_se: constant samples",
        });
    }
    let n = samples.len();
    Ok(VarianceEstimate {
        value,
        std_error: value * (2.0 / (n as f64 - 1.0)).sqrt(),
        n,
    })
}

/// Excess kurtosis: fourth standardized central moment minus 3 (zero for a
/// Gaussian). Population normalization (1/n), matching the large-n regime
/// this crate operates in.
pub fn excess_kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(Error::InsufficientSamples {
            context: "excess_kurtosis",
            needed: 4,
            got: samples.len(),
        });
    }
    let m = moments(samples);
    let m2 = m.central(2);
    let m4 = m.central(4);
    if !m4.is_finite() {
        return Err(Error::InvalidParameter {
            name: "samples",
            value: m4,
            reason: "samples contain non-finite values",
        });
    }
    if m2 == 0.0 {
        return Err(Error::DegenerateVariance {
            context: "excess_kurtosis: constant samples",
        });
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Gaussian-theory standard error of the excess kurtosis of `n` samples.
pub fn kurtosis_se_gaussian(n: usize) -> f64 {
    (24.0 / n as f64).sqrt()
}

/// Standard normal CDF.
fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Reduced chi-square of `samples` against the best-fit Gaussian.
///
/// The fit uses the sample mean and unbiased variance. `bins` cells tile
/// `mean ± 4 sd` with equal widths; the first and last cells absorb the
/// tails so the partition covers the whole line. Expected counts come from
/// the fitted CDF; any cell expecting fewer than 20 counts is rejected
/// (sparse cells invalidate the chi-square approximation). The statistic is
/// divided by `bins - 3` (two fitted parameters plus normalization), so a
/// truly Gaussian sample gives values near 1.
pub fn gaussian_chi2_reduced(samples: &[f64], bins: usize) -> Result<f64> {
    if samples.len() < 10_000 {
        return Err(Error::InsufficientSamples {
            context: "gaussian_chi2_reduced",
            needed: 10_000,
            got: samples.len(),
        });
    }
    if bins < 4 {
        return Err(Error::InvalidParameter {
            name: "bins",
            value: bins as f64,
            reason: "need at least 4 bins (>= 1 degree of freedom)",
        });
    }
    let est = variance_with_se(samples)?;
    let m = moments(samples);
    let mean = m.mean();
    let sd = est.value.sqrt();
    let lo = mean - 4.0 * sd;
    let width = 8.0 * sd / bins as f64;

    // Observed counts, accumulated per chunk then summed (integer sums are
    // order-independent, so this is thread-count invariant).
    let observed: Vec<u64> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut hist = vec![0u64; bins];
            for &x in chunk {
                let idx = ((x - lo) / width).floor();
                let idx = if idx < 0.0 {
                    0
                } else if idx >= bins as f64 {
                    bins - 1
                } else {
                    idx as usize
                };
                hist[idx] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; bins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let n = samples.len() as f64;
    let mut chi2 = 0.0;
    for (i, &obs) in observed.iter().enumerate() {
        let z_lo = if i == 0 {
            f64::NEG_INFINITY
        } else {
            (lo + i as f64 * width - mean) / sd
        };
        let z_hi = if i == bins - 1 {
            f64::INFINITY
        } else {
            (lo + (i + 1) as f64 * width - mean) / sd
        };
        let p = normal_cdf(z_hi) - normal_cdf(z_lo);
        let expected = n * p;
        if expected < CHI2_EXPECTED_FLOOR {
            return Err(Error::SparseBins {
                bin: i,
                expected,
                floor: CHI2_EXPECTED_FLOOR,
            });
        }
        let diff = obs as f64 - expected;
        chi2 += diff * diff / expected;
    }
    Ok(chi2 / (bins - 3) as f64)
}

/// Largest bin count from a fixed ladder whose thinnest fitted-Gaussian
/// cell still expects at least the sparse-bin floor for `count` samples.
///
/// The histogram tiles mean +/- 4 sd, so the thinnest cell is the interior
/// one touching z = 4 with expected mass `count * (Phi(4) - Phi(4 - 8/bins))`;
/// a 2% cushion absorbs the rounding between the analytic tiling and the
/// fitted one. Use this to pick `bins` for [`gaussian_chi2_reduced`] when a
/// sample-size-robust default is wanted.
pub fn chi2_default_bins(count: usize) -> usize {
    const LADDER: [usize; 15] = [80, 64, 56, 48, 40, 32, 24, 20, 16, 12, 10, 8, 6, 5, 4];
    let n = count as f64;
    for &bins in &LADDER {
        let thinnest = normal_cdf(4.0) - normal_cdf(4.0 - 8.0 / bins as f64);
        if n * thinnest >= CHI2_EXPECTED_FLOOR * 1.02 {
            return bins;
        }
    }
    *LADDER.last().unwrap()
}

fn check_bootstrap_args(n: usize, resamples: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientSamples {
            context: "bootstrap",
            needed: 2,
            got: n,
        });
    }
    if resamples < 8 {
        return Err(Error::InvalidParameter {
            name: "resamples",
            value: resamples as f64,
            reason: "need at least 8 resamples for a standard error",
        });
    }
    Ok(())
}

fn stddev_of(estimates: &[f64]) -> f64 {
    moments(estimates).variance().sqrt()
}

/// Bootstrap standard error of an arbitrary statistic of `rows`.
///
/// Resample `r` draws its indices from substream `r` of `seed`, so the
/// result is reproducible and independent of the rayon pool size. The
/// statistic sees a materialized resample slice; for plain variance,
/// kurtosis, or variance products use the specialized one-pass variants
/// below, which avoid the copy.
pub fn bootstrap_se<T, F>(rows: &[T], resamples: usize, seed: StreamSeed, stat: F) -> Result<f64>
where
    T: Copy + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    check_bootstrap_args(rows.len(), resamples)?;
    let n = rows.len();
    let estimates: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, r| {
                let mut rng = seed.rng(r as u64);
                buf.clear();
                for _ in 0..n {
                    buf.push(rows[rng.random_range(0..n)]);
                }
                stat(buf)
            },
        )
        .collect();
    Ok(stddev_of(&estimates))
}

/// Raw power sums up to fourth order for the bootstrap hot loops.
///
/// Central moments from raw sums lose digits only when the mean is large
/// compared to the spread; quadrature data is centered near zero, and a
/// standard error needs three digits, not twelve.
#[derive(Default, Clone, Copy)]
struct PowerSums {
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl PowerSums {
    #[inline]
    fn push(&mut self, x: f64) {
        let x2 = x * x;
        self.s1 += x;
        self.s2 += x2;
        self.s3 += x2 * x;
        self.s4 += x2 * x2;
    }

    #[inline]
    fn add(&mut self, other: &PowerSums) {
        self.s1 += other.s1;
        self.s2 += other.s2;
        self.s3 += other.s3;
        self.s4 += other.s4;
    }

    fn variance(&self, n: f64) -> f64 {
        (self.s2 - self.s1 * self.s1 / n) / (n - 1.0)
    }

    fn excess_kurtosis(&self, n: f64) -> f64 {
        let m = self.s1 / n;
        let m2 = self.s2 / n - m * m;
        let m4 = self.s4 / n - 4.0 * m * self.s3 / n + 6.0 * m * m * self.s2 / n - 3.0 * m.powi(4);
        m4 / (m2 * m2) - 3.0
    }
}

/// Above this size the specialized bootstrap paths resample contiguous
/// blocks of precomputed power sums instead of individual samples. For
/// i.i.d. data the block sums are themselves i.i.d., so the block bootstrap
/// estimates the same standard error while replacing `O(n)` random gathers
/// per resample with `O(blocks)` additions; with ~256 blocks the SE itself
/// carries a few percent of estimator noise, negligible against the k-sigma
/// tolerances it feeds.
const BOOT_BLOCK_MIN_N: usize = 4096;
const BOOT_TARGET_BLOCKS: usize = 256;

/// Contiguous block ranges covering `0..n`; geometry depends only on `n`,
/// never on thread count, preserving bit-reproducibility.
fn block_bounds(n: usize) -> Vec<(usize, usize)> {
    let len = n.div_ceil(BOOT_TARGET_BLOCKS);
    let mut out = Vec::with_capacity(n.div_ceil(len));
    let mut start = 0;
    while start < n {
        let end = (start + len).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

fn bootstrap_scalar_se<F>(
    samples: &[f64],
    resamples: usize,
    seed: StreamSeed,
    stat: F,
) -> Result<f64>
where
    F: Fn(&PowerSums, f64) -> f64 + Sync,
{
    check_bootstrap_args(samples.len(), resamples)?;
    let n = samples.len();
    let estimates: Vec<f64> = if n >= BOOT_BLOCK_MIN_N {
        let blocks: Vec<(PowerSums, usize)> = block_bounds(n)
            .into_iter()
            .map(|(a, b)| {
                let mut s = PowerSums::default();
                for &x in &samples[a..b] {
                    s.push(x);
                }
                (s, b - a)
            })
            .collect();
        let b = blocks.len();
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = seed.rng(r as u64);
                let mut sums = PowerSums::default();
                let mut m = 0usize;
                for _ in 0..b {
                    let (s, c) = blocks[rng.random_range(0..b)];
                    sums.add(&s);
                    m += c;
                }
                stat(&sums, m as f64)
            })
            .collect()
    } else {
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = seed.rng(r as u64);
                let mut sums = PowerSums::default();
                for _ in 0..n {
                    sums.push(samples[rng.random_range(0..n)]);
                }
                stat(&sums, n as f64)
            })
            .collect()
    };
    Ok(stddev_of(&estimates))
}

/// Bootstrap standard error of the unbiased sample variance.
///
/// Large inputs take the block-resampling path (see [`bootstrap_se`] for
/// the per-sample variant); both are seed-deterministic.
pub fn bootstrap_variance_se(samples: &[f64], resamples: usize, seed: StreamSeed) -> Result<f64> {
    bootstrap_scalar_se(samples, resamples, seed, |s, n| s.variance(n))
}

/// Bootstrap standard error of the excess kurtosis.
pub fn bootstrap_kurtosis_se(samples: &[f64], resamples: usize, seed: StreamSeed) -> Result<f64> {
    bootstrap_scalar_se(samples, resamples, seed, |s, n| s.excess_kurtosis(n))
}

/// Bootstrap standard error of the variance product `Var(x) * Var(p)`,
/// resampling (x, p) pairs jointly.
pub fn bootstrap_product_se(
    pairs: &[(f64, f64)],
    resamples: usize,
    seed: StreamSeed,
) -> Result<f64> {
    check_bootstrap_args(pairs.len(), resamples)?;
    let n = pairs.len();
    let estimates: Vec<f64> = if n >= BOOT_BLOCK_MIN_N {
        let blocks: Vec<(PowerSums, PowerSums, usize)> = block_bounds(n)
            .into_iter()
            .map(|(a, b)| {
                let mut sx = PowerSums::default();
                let mut sp = PowerSums::default();
                for &(x, p) in &pairs[a..b] {
                    sx.push(x);
                    sp.push(p);
                }
                (sx, sp, b - a)
            })
            .collect();
        let b = blocks.len();
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = seed.rng(r as u64);
                let mut sx = PowerSums::default();
                let mut sp = PowerSums::default();
                let mut m = 0usize;
                for _ in 0..b {
                    let (bx, bp, c) = blocks[rng.random_range(0..b)];
                    sx.add(&bx);
                    sp.add(&bp);
                    m += c;
                }
                sx.variance(m as f64) * sp.variance(m as f64)
            })
            .collect()
    } else {
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = seed.rng(r as u64);
                let mut sx = PowerSums::default();
                let mut sp = PowerSums::default();
                for _ in 0..n {
                    let (x, p) = pairs[rng.random_range(0..n)];
                    sx.push(x);
                    sp.push(p);
                }
                sx.variance(n as f64) * sp.variance(n as f64)
            })
            .collect()
    };
    Ok(stddev_of(&estimates))
}

/// Sample covariance matrix of the four columns `(x_I, p_I, x_II, p_II)`.
///
/// In shot-noise units the vacuum covariance is the 4x4 identity. The matrix
/// is symmetrized from the upper triangle, uses the unbiased `n - 1`
/// normalization, and must satisfy the physicality bound (smallest
/// symplectic eigenvalue >= 1) within Monte Carlo tolerance.
#[derive(Debug, Clone, Copy)]
pub struct CovMatrix4 {
    m: [[f64; 4]; 4],
    n: usize,
}

/// Chunk accumulator for the 4-column covariance (means + co-moments).
#[derive(Clone, Copy)]
struct CoMoments4 {
    n: u64,
    mean: [f64; 4],
    c: [[f64; 4]; 4],
}

impl CoMoments4 {
    fn new() -> Self {
        CoMoments4 {
            n: 0,
            mean: [0.0; 4],
            c: [[0.0; 4]; 4],
        }
    }

    // Index loops mirror the i <= j triangular update rules; iterator
    // adapters would obscure the symmetry.
    #[allow(clippy::needless_range_loop)]
    fn push(&mut self, row: [f64; 4]) {
        self.n += 1;
        let n = self.n as f64;
        let mut delta_old = [0.0; 4];
        for i in 0..4 {
            delta_old[i] = row[i] - self.mean[i];
            self.mean[i] += delta_old[i] / n;
        }
        for i in 0..4 {
            for j in i..4 {
                self.c[i][j] += delta_old[i] * (row[j] - self.mean[j]);
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn merge(a: CoMoments4, b: CoMoments4) -> CoMoments4 {
        if a.n == 0 {
            return b;
        }
        if b.n == 0 {
            return a;
        }
        let na = a.n as f64;
        let nb = b.n as f64;
        let n = na + nb;
        let mut out = CoMoments4::new();
        out.n = a.n + b.n;
        let mut delta = [0.0; 4];
        for i in 0..4 {
            delta[i] = b.mean[i] - a.mean[i];
            out.mean[i] = a.mean[i] + delta[i] * nb / n;
        }
        for i in 0..4 {
            for j in i..4 {
                out.c[i][j] = a.c[i][j] + b.c[i][j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        out
    }
}

/// Covariance of a two-mode ensemble's rows.
#[allow(clippy::needless_range_loop)] // triangular fill of a symmetric matrix
pub fn covariance4(tm: &TwoModeEnsemble) -> Result<CovMatrix4> {
    let rows = tm.rows();
    // The physicality validation below compares symplectic eigenvalues
    // against a Monte Carlo tolerance; far below 10^4 samples that check
    // loses meaning.
    if rows.len() < 10_000 {
        return Err(Error::InsufficientSamples {
            context: "covariance4",
            needed: 10_000,
            got: rows.len(),
        });
    }
    let mut parts: Vec<CoMoments4> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = CoMoments4::new();
            for r in chunk {
                acc.push([r.x_i, r.p_i, r.x_ii, r.p_ii]);
            }
            acc
        })
        .collect();
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|pair| {
                if pair.len() == 2 {
                    CoMoments4::merge(pair[0], pair[1])
                } else {
                    pair[0]
                }
            })
            .collect();
    }
    let acc = parts[0];
    let norm = rows.len() as f64 - 1.0;
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            m[i][j] = acc.c[i][j] / norm;
            m[j][i] = m[i][j];
        }
    }
    CovMatrix4::from_matrix(m, rows.len())
}

fn det2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a * d - b * c
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * det2(m[1][1], m[1][2], m[2][1], m[2][2])
        - m[0][1] * det2(m[1][0], m[1][2], m[2][0], m[2][2])
        + m[0][2] * det2(m[1][0], m[1][1], m[2][0], m[2][1])
}

fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let mut total = 0.0;
    for col in 0..4 {
        let mut minor = [[0.0; 3]; 3];
        for (mi, row) in m.iter().enumerate().skip(1) {
            let mut mj = 0;
            for (j, &v) in row.iter().enumerate() {
                if j != col {
                    minor[mi - 1][mj] = v;
                    mj += 1;
                }
            }
        }
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * m[0][col] * det3(&minor);
    }
    total
}

impl CovMatrix4 {
    /// Wrap an explicit covariance matrix, e.g. an analytic one. `n` is the
    /// sample count behind it and sets the physicality tolerance (use a
    /// large value for exact matrices).
    #[allow(clippy::needless_range_loop)] // symmetry check needs (i, j)/(j, i) pairs
    pub fn from_matrix(m: [[f64; 4]; 4], n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientSamples {
                context: "CovMatrix4",
                needed: 2,
                got: n,
            });
        }
        let mut scale = 0.0f64;
        for row in &m {
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "covariance",
                        value: v,
                        reason: "non-finite entry",
                    });
                }
                scale = scale.max(v.abs());
            }
        }
        for i in 0..4 {
            if m[i][i] <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "covariance",
                    value: m[i][i],
                    reason: "non-positive diagonal entry",
                });
            }
            for j in 0..4 {
                if (m[i][j] - m[j][i]).abs() > 1e-9 * scale.max(1.0) {
                    return Err(Error::InvalidParameter {
                        name: "covariance",
                        value: m[i][j] - m[j][i],
                        reason: "matrix is not symmetric",
                    });
                }
            }
        }
        let cov = CovMatrix4 { m, n };
        let (nu_min, _) = cov.symplectic_eigenvalues();
        let tol = cov.mc_tolerance();
        if nu_min < 1.0 - tol {
            return Err(Error::UnphysicalCovariance {
                nu_min,
                tolerance: tol,
            });
        }
        Ok(cov)
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Allowed dip of the smallest symplectic eigenvalue below 1 from Monte
    /// Carlo noise: three standard errors of a variance-scale estimate.
    fn mc_tolerance(&self) -> f64 {
        let max_diag = (0..4).map(|i| self.m[i][i]).fold(0.0f64, f64::max);
        3.0 * (2.0 / (self.n as f64 - 1.0)).sqrt() * max_diag + 1e-12
    }

    /// Symplectic eigenvalues (smallest first) via the two-mode invariants:
    /// with 2x2 blocks A, B, C and `delta = det A + det B + 2 det C`,
    /// `nu^2 = (delta ± sqrt(delta^2 - 4 det V)) / 2`. In shot-noise units a
    /// physical state has both eigenvalues >= 1.
    pub fn symplectic_eigenvalues(&self) -> (f64, f64) {
        self.sympl_eigs(1.0)
    }

    fn sympl_eigs(&self, c_sign: f64) -> (f64, f64) {
        let m = &self.m;
        let det_a = det2(m[0][0], m[0][1], m[1][0], m[1][1]);
        let det_b = det2(m[2][2], m[2][3], m[3][2], m[3][3]);
        let det_c = det2(m[0][2], m[0][3], m[1][2], m[1][3]);
        let det_v = det4(m);
        let delta = det_a + det_b + 2.0 * c_sign * det_c;
        let disc = (delta * delta - 4.0 * det_v).max(0.0);
        let lo = ((delta - disc.sqrt()) / 2.0).max(0.0).sqrt();
        let hi = ((delta + disc.sqrt()) / 2.0).max(0.0).sqrt();
        (lo, hi)
    }

    /// Smallest symplectic eigenvalue of the partial transpose (momentum
    /// sign flip on mode II), the quantity behind the entanglement witness.
    pub fn pt_symplectic_min(&self) -> f64 {
        // Flipping the sign of p_II negates det C and leaves the rest; the
        // full determinant is invariant under the flip.
        self.sympl_eigs(-1.0).0
    }
}

/// Logarithmic negativity `E_N = max(0, -log2 nu~)` where `nu~` is the
/// smallest symplectic eigenvalue of the partially transposed covariance.
/// Zero for separable Gaussian states; the 50/50 mix of x- and p-squeezed
/// pure states of equal strength gives exactly `-log2` of their squeezed
/// variance.
pub fn log_negativity(cov: &CovMatrix4) -> Result<f64> {
    let nu = cov.pt_symplectic_min();
    if nu <= 0.0 {
        return Err(Error::UnphysicalCovariance {
            nu_min: nu,
            tolerance: 0.0,
        });
    }
    Ok((-nu.log2()).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{sample_squeezed, SqueezedStateSpec};
    use approx::assert_relative_eq;

    #[test]
    fn variance_small_exact_case() {
        let est = variance_with_se(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_relative_eq!(est.value, 4.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(
            est.std_error,
            (4.0 / 3.0) * (2.0f64 / 3.0).sqrt(),
            max_relative = 1e-15
        );
        assert_eq!(est.n, 4);
    }

    #[test]
    fn variance_rejects_degenerate_input() {
        assert!(matches!(
            variance_with_se(&[5.0]),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            variance_with_se(&[2.0; 64]),
            Err(Error::DegenerateVariance { .. })
        ));
        assert!(variance_with_se(&[1.0, f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn moments_match_two_pass_reference() {
        // Deterministic but irregular data spanning several chunks.
        let xs: Vec<f64> = (0..3 * CHUNK + 17)
            .map(|i| ((i as f64 * 0.7391).sin() * 3.0 + (i % 13) as f64 * 0.1).powi(2) - 2.0)
            .collect();
        let m = moments(&xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let c2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let c3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let c4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        assert_relative_eq!(m.mean(), mean, max_relative = 1e-12);
        assert_relative_eq!(m.central(2), c2, max_relative = 1e-11);
        assert_relative_eq!(m.central(3), c3, max_relative = 1e-9);
        assert_relative_eq!(m.central(4), c4, max_relative = 1e-11);
    }

    #[test]
    fn kurtosis_of_gaussian_and_two_point_mixture() {
        let spec = SqueezedStateSpec::vacuum();
        let n = 400_000;
        let ens = sample_squeezed(&spec, n, crate::rng::StreamSeed::new(31)).unwrap();
        let k = excess_kurtosis(&ens.xs()).unwrap();
        assert!(
            k.abs() < 3.0 * kurtosis_se_gaussian(n),
            "Gaussian kurtosis {k} outside null band"
        );

        // Equal mixture of N(0, v1) and N(0, v2) has kurtosis
        // 3 (v1^2 + v2^2) / 2 / ((v1+v2)/2)^2 - 3.
        let scale = [0.5f64, 2.0];
        let xs: Vec<f64> = ens
            .xs()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * scale[i % 2].sqrt())
            .collect();
        let expect = 3.0 * (0.25 + 4.0) / 2.0 / 1.25f64.powi(2) - 3.0;
        let k = excess_kurtosis(&xs).unwrap();
        assert!(
            (k - expect).abs() < 5.0 * kurtosis_se_gaussian(n),
            "mixture kurtosis {k} vs analytic {expect}"
        );
    }

    #[test]
    fn chi2_near_one_for_gaussian_and_large_for_mixture() {
        let spec = SqueezedStateSpec::vacuum();
        let n = 200_000;
        let xs = sample_squeezed(&spec, n, crate::rng::StreamSeed::new(77))
            .unwrap()
            .xs();
        // Hand-picking a large bin count (say 60) would violate the sparse
        // floor at this n: the ladder is the supported way to choose bins.
        let bins = chi2_default_bins(n);
        assert_eq!(bins, 20);
        let red = gaussian_chi2_reduced(&xs, bins).unwrap();
        let band = 3.0 * (2.0 / (bins as f64 - 3.0)).sqrt();
        assert!(
            (red - 1.0).abs() < band,
            "null chi2_red {red} outside 1 ± {band}"
        );

        let mixed: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| if i % 2 == 0 { x * 0.4 } else { x * 2.2 })
            .collect();
        let red_mixed = gaussian_chi2_reduced(&mixed, bins).unwrap();
        assert!(red_mixed > 10.0, "mixture chi2_red {red_mixed} too small");
    }

    #[test]
    fn chi2_rejects_sparse_and_small_inputs() {
        let spec = SqueezedStateSpec::vacuum();
        let xs = sample_squeezed(&spec, 10_000, crate::rng::StreamSeed::new(5))
            .unwrap()
            .xs();
        // 10^4 samples over 300 bins: tail cells expect ~0 counts.
        assert!(matches!(
            gaussian_chi2_reduced(&xs, 300),
            Err(Error::SparseBins { .. })
        ));
        assert!(matches!(
            gaussian_chi2_reduced(&xs[..5000], 40),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(gaussian_chi2_reduced(&xs, 3).is_err());
    }

    #[test]
    fn bootstrap_matches_gaussian_theory_on_gaussian_data() {
        let spec = SqueezedStateSpec::vacuum();
        let n = 100_000;
        let xs = sample_squeezed(&spec, n, crate::rng::StreamSeed::new(13))
            .unwrap()
            .xs();
        let seed = crate::rng::StreamSeed::new(14);
        let boot = bootstrap_variance_se(&xs, 400, seed).unwrap();
        let theory = variance_with_se(&xs).unwrap().std_error;
        assert!(
            (boot / theory - 1.0).abs() < 0.25,
            "bootstrap SE {boot} vs Gaussian theory {theory}"
        );
        // Deterministic: same seed, same answer, bit for bit.
        let again = bootstrap_variance_se(&xs, 400, seed).unwrap();
        assert_eq!(boot.to_bits(), again.to_bits());
    }

    #[test]
    fn bootstrap_generic_agrees_with_specialized() {
        let spec = SqueezedStateSpec::vacuum();
        // Below the block threshold both paths draw per-sample indices.
        let xs = sample_squeezed(&spec, 3_000, crate::rng::StreamSeed::new(21))
            .unwrap()
            .xs();
        let seed = crate::rng::StreamSeed::new(22);
        let fast = bootstrap_variance_se(&xs, 200, seed).unwrap();
        let slow = bootstrap_se(&xs, 200, seed, |s| {
            variance_with_se(s).map(|e| e.value).unwrap_or(f64::NAN)
        })
        .unwrap();
        // Same resample indices, so only the summation path differs.
        assert_relative_eq!(fast, slow, max_relative = 1e-6);
    }

    #[test]
    fn block_bootstrap_agrees_with_plain_bootstrap() {
        // Post-selected (non-Gaussian) data straddling the block threshold:
        // the two resampling schemes estimate the same standard error.
        let spec = SqueezedStateSpec::new(0.5, 2.0).unwrap();
        let mut xs = sample_squeezed(&spec, 12_000, crate::rng::StreamSeed::new(31))
            .unwrap()
            .xs();
        xs.retain(|x| x.abs() < 0.9); // hard truncation, strongly non-Gaussian
        assert!(xs.len() > BOOT_BLOCK_MIN_N);
        let block = bootstrap_variance_se(&xs, 600, crate::rng::StreamSeed::new(32)).unwrap();
        let plain = bootstrap_se(&xs, 600, crate::rng::StreamSeed::new(33), |s| {
            variance_with_se(s).map(|e| e.value).unwrap_or(f64::NAN)
        })
        .unwrap();
        assert!(
            (block / plain - 1.0).abs() < 0.2,
            "block SE {block} vs plain SE {plain}"
        );
        // Kurtosis and product SEs run the same machinery; smoke their paths.
        let pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 2.0 * x)).collect();
        assert!(bootstrap_kurtosis_se(&xs, 200, crate::rng::StreamSeed::new(34)).unwrap() > 0.0);
        assert!(bootstrap_product_se(&pairs, 200, crate::rng::StreamSeed::new(35)).unwrap() > 0.0);
    }

    #[test]
    fn bootstrap_argument_validation() {
        let xs = [1.0, 2.0, 3.0];
        assert!(bootstrap_variance_se(&xs, 4, crate::rng::StreamSeed::new(0)).is_err());
        assert!(bootstrap_variance_se(&xs[..1], 100, crate::rng::StreamSeed::new(0)).is_err());
    }

    fn exact_mixed_splitter_cov() -> [[f64; 4]; 4] {
        // Balanced splitter fed with pure (0.5, 2) and (2, 0.5): modes have
        // variance 1.25 in both quadratures, cross block diag(-0.75, +0.75).
        [
            [1.25, 0.0, -0.75, 0.0],
            [0.0, 1.25, 0.0, 0.75],
            [-0.75, 0.0, 1.25, 0.0],
            [0.0, 0.75, 0.0, 1.25],
        ]
    }

    #[test]
    fn log_negativity_exact_values() {
        let id = CovMatrix4::from_matrix(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            1 << 40,
        )
        .unwrap();
        assert_eq!(log_negativity(&id).unwrap(), 0.0);
        let (lo, hi) = id.symplectic_eigenvalues();
        assert_relative_eq!(lo, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-12);

        let mixed = CovMatrix4::from_matrix(exact_mixed_splitter_cov(), 1 << 40).unwrap();
        assert_relative_eq!(mixed.pt_symplectic_min(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(log_negativity(&mixed).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_rejects_bad_matrices() {
        let mut asym = exact_mixed_splitter_cov();
        asym[0][2] = 0.5; // breaks symmetry
        assert!(CovMatrix4::from_matrix(asym, 1000).is_err());

        // Uncertainty-violating "covariance": sub-vacuum in both quadratures.
        let squeezed_both = [
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        assert!(matches!(
            CovMatrix4::from_matrix(squeezed_both, 1 << 40),
            Err(Error::UnphysicalCovariance { .. })
        ));
    }

    #[test]
    fn symplectic_eigenvalues_match_dense_eigen_oracle() {
        // Independent route: the squared symplectic spectrum of V equals the
        // ordinary spectrum of V^{1/2} (-Omega V Omega) V^{1/2}, a symmetric
        // positive-definite matrix. Symmetric eigensolvers always converge;
        // a general real-Schur iteration on Omega * V can cycle forever on
        // its purely imaginary (and, for pure states, degenerate) spectrum.
        #[allow(clippy::needless_range_loop)] // flips a row and a column in place
        fn oracle(m: &[[f64; 4]; 4], pt: bool) -> f64 {
            let mut v = *m;
            if pt {
                // Partial transpose: flip the sign of p_II row and column.
                for k in 0..4 {
                    v[3][k] = -v[3][k];
                    v[k][3] = -v[k][3];
                }
            }
            let omega = nalgebra::Matrix4::new(
                0.0, 1.0, 0.0, 0.0, //
                -1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, -1.0, 0.0,
            );
            let vm = nalgebra::Matrix4::from_fn(|i, j| v[i][j]);
            let eig = nalgebra::SymmetricEigen::new(vm);
            let sqrt_v = eig.eigenvectors
                * nalgebra::Matrix4::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
                * eig.eigenvectors.transpose();
            let prod = sqrt_v * (-omega * vm * omega) * sqrt_v;
            let sym = (prod + prod.transpose()) * 0.5;
            nalgebra::SymmetricEigen::new(sym)
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |acc, &l| acc.min(l))
                .sqrt()
        }

        let cases = [
            exact_mixed_splitter_cov(),
            // A correlated but separable-ish case with asymmetric modes.
            [
                [2.0, 0.1, 0.3, 0.0],
                [0.1, 1.1, 0.0, -0.2],
                [0.3, 0.0, 1.6, 0.05],
                [0.0, -0.2, 0.05, 1.4],
            ],
        ];
        for m in cases {
            let cov = CovMatrix4::from_matrix(m, 1 << 40).unwrap();
            assert_relative_eq!(
                cov.symplectic_eigenvalues().0,
                oracle(&m, false),
                max_relative = 1e-9
            );
            assert_relative_eq!(
                cov.pt_symplectic_min(),
                oracle(&m, true),
                max_relative = 1e-9
            );
        }
    }
}
