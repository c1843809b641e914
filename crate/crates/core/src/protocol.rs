//! The purification protocol: balanced beam-splitter mixing of two state
//! copies, homodyne threshold conditioning on mode I, survival accounting,
//! and iterated rounds.
//!
//! Per-sample retention of both quadratures is legitimate here because every
//! state in this pipeline has a non-negative Wigner function, so phase-space
//! sampling reproduces all homodyne marginals and symmetric-ordered moments.
//! This shortcut would be invalid for negative-Wigner states.

use crate::channels::{
    apply_gaussian_phase_diffusion, apply_loss, apply_phase_series, bandlimited_phase_series,
    LossSpec, PhaseNoiseSpec,
};
use crate::error::{Error, Result};
use crate::phase_space::{sample_squeezed, Ensemble, QuadPoint, SqueezedStateSpec};
use crate::rng::{combine_fingerprints, StreamSeed};
use crate::stats::{covariance4, variance_with_se, CovMatrix4, QuadVariances};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

/// One paired sample of the two beam-splitter output modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeRow {
    pub x_i: f64,
    pub p_i: f64,
    pub x_ii: f64,
    pub p_ii: f64,
}

/// Paired samples of the two output modes of a balanced beam splitter.
///
/// Mode I is the monitored (trigger) port, mode II the verification port.
#[derive(Debug, Clone)]
pub struct TwoModeEnsemble {
    rows: Vec<TwoModeRow>,
    seed_a: Option<u64>,
    seed_b: Option<u64>,
    provenance: String,
}

impl TwoModeEnsemble {
    /// Wrap externally produced rows (e.g. recorded time series).
    pub fn from_rows(rows: Vec<TwoModeRow>, provenance: impl Into<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyEnsemble {
                context: "TwoModeEnsemble::from_rows",
            });
        }
        Ok(Self {
            rows,
            seed_a: None,
            seed_b: None,
            provenance: provenance.into(),
        })
    }

    pub fn rows(&self) -> &[TwoModeRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Combined identity of the two input arms, if both were seeded.
    fn merged_seed(&self) -> Option<u64> {
        match (self.seed_a, self.seed_b) {
            (Some(a), Some(b)) => Some(combine_fingerprints(a, b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }
}

/// How survivors are chosen: a fixed window |x_I| <= x, or a window tuned to
/// keep a target fraction of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", try_from = "SelectionRaw")]
pub enum SelectionRule {
    Threshold { x: f64 },
    TargetRate { rate: f64 },
}

/// Raw deserialization target so unknown keys are rejected (serde does not
/// enforce `deny_unknown_fields` on internally tagged enums).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionRaw {
    mode: String,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    rate: Option<f64>,
}

impl TryFrom<SelectionRaw> for SelectionRule {
    type Error = String;

    fn try_from(raw: SelectionRaw) -> std::result::Result<Self, String> {
        let rule = match raw.mode.as_str() {
            "threshold" => {
                if raw.rate.is_some() {
                    return Err("threshold selection takes only `x`".into());
                }
                SelectionRule::Threshold {
                    x: raw.x.ok_or("threshold selection needs `x`")?,
                }
            }
            "target_rate" => {
                if raw.x.is_some() {
                    return Err("target_rate selection takes only `rate`".into());
                }
                SelectionRule::TargetRate {
                    rate: raw.rate.ok_or("target_rate selection needs `rate`")?,
                }
            }
            other => return Err(format!("unknown selection mode `{other}`")),
        };
        rule.validate().map_err(|e| e.to_string())?;
        Ok(rule)
    }
}

impl SelectionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionRule::Threshold { x } => {
                // +inf is a legitimate no-op window; NaN and negatives are not.
                if x.is_nan() || x < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "x",
                        value: x,
                        reason: "threshold must satisfy x >= 0 (shot-noise units)",
                    });
                }
            }
            SelectionRule::TargetRate { rate } => {
                if !rate.is_finite() || rate <= 0.0 || rate > 1.0 {
                    return Err(Error::InvalidParameter {
                        name: "rate",
                        value: rate,
                        reason: "target survival rate must satisfy 0 < rate <= 1",
                    });
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one conditioning pass: the surviving mode-II ensemble plus the
/// bookkeeping needed to plot it.
#[derive(Debug, Clone)]
pub struct PurifiedResult {
    /// Mode-II points of the rows that passed the trigger.
    pub survivors: Ensemble,
    /// The full four-quadrature rows that passed (for covariance analysis).
    pub selected: TwoModeEnsemble,
    /// Fraction of rows kept.
    pub survival_rate: f64,
    /// The window actually applied to |x_I|.
    pub threshold: f64,
    /// Unconditioned mode-II variances (what HD II sees without the trigger).
    pub input_stats: QuadVariances,
    /// Conditioned mode-II variances.
    pub output_stats: QuadVariances,
    /// Covariance of the unconditioned splitter output — a true Gaussian
    /// state, so the physicality bound applies. Filled by [`purify_round`]
    /// when the pair holds at least 10^4 rows; [`condition`] alone leaves it
    /// empty.
    pub input_covariance: Option<CovMatrix4>,
}

/// Statistics of one purification round inside [`iterate_purify`].
///
/// Rounds keep `2^(rounds - k)` survivor ensembles alive; the statistics
/// reported here are the lead (index-0) pair's, which is also the chain that
/// makes `rounds = 1` coincide bit-for-bit with [`purify_round`].
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// 1-based round index.
    pub round: usize,
    pub threshold: f64,
    pub survival_rate: f64,
    /// Unconditioned mode-II variances of the lead pair.
    pub input_stats: QuadVariances,
    /// Conditioned mode-II variances of the lead pair.
    pub output_stats: QuadVariances,
    /// Lead pair's surviving mode-II ensemble.
    pub survivors: Ensemble,
    /// Lead pair's surviving four-quadrature rows.
    pub selected: TwoModeEnsemble,
    /// Lead pair's unconditioned splitter covariance (pairs >= 10^4 rows).
    pub input_covariance: Option<CovMatrix4>,
}

/// Result of a full iterated run.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// The lead arm after noise (and loss): the round-0 / input state.
    pub diffused: Ensemble,
    /// One entry per round, in order.
    pub rounds: Vec<RoundOutcome>,
}

impl IterationOutcome {
    /// The final round's selected two-mode rows, if any round ran.
    pub fn final_selected(&self) -> Option<&TwoModeEnsemble> {
        self.rounds.last().map(|r| &r.selected)
    }
}

/// Mix two equal-length copies on a balanced (50/50) beam splitter.
///
/// Row `i` is `((xA+xB)/sqrt2, (pA+pB)/sqrt2, (xA-xB)/sqrt2, (pA-pB)/sqrt2)`.
/// The copies must be independent: two ensembles carrying the same seed
/// fingerprint, or driven by the same recorded noise series, are rejected.
pub fn beam_split(a: &Ensemble, b: &Ensemble) -> Result<TwoModeEnsemble> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyEnsemble {
            context: "beam_split",
        });
    }
    if let (Some(fa), Some(fb)) = (a.seed_fingerprint(), b.seed_fingerprint()) {
        if fa == fb {
            return Err(Error::IdenticalSeeds { fingerprint: fa });
        }
    }
    if let (Some(na), Some(nb)) = (a.noise_series_fingerprint(), b.noise_series_fingerprint()) {
        if na == nb {
            return Err(Error::SharedNoiseSeries { fingerprint: na });
        }
    }
    let rows: Vec<TwoModeRow> = a
        .points()
        .par_iter()
        .zip(b.points().par_iter())
        .map(|(pa, pb)| TwoModeRow {
            x_i: (pa.x + pb.x) * FRAC_1_SQRT_2,
            p_i: (pa.p + pb.p) * FRAC_1_SQRT_2,
            x_ii: (pa.x - pb.x) * FRAC_1_SQRT_2,
            p_ii: (pa.p - pb.p) * FRAC_1_SQRT_2,
        })
        .collect();
    Ok(TwoModeEnsemble {
        rows,
        seed_a: a.seed_fingerprint(),
        seed_b: b.seed_fingerprint(),
        provenance: format!("split[{} || {}]", a.provenance(), b.provenance()),
    })
}

/// The |x_I| window that keeps the requested fraction of rows.
///
/// Returns the k-th smallest |x_I| with `k = round(rate * n)` clamped to
/// `[1, n]`; conditioning at this window keeps exactly k rows (within the
/// tie-acceptance convention), i.e. the rate is met within 1/n.
pub fn threshold_from_rate(tm: &TwoModeEnsemble, rate: f64) -> Result<f64> {
    if !rate.is_finite() || rate <= 0.0 || rate > 1.0 {
        return Err(Error::InvalidParameter {
            name: "rate",
            value: rate,
            reason: "target survival rate must satisfy 0 < rate <= 1",
        });
    }
    if tm.is_empty() {
        return Err(Error::EmptyEnsemble {
            context: "threshold_from_rate",
        });
    }
    let n = tm.len();
    let k = ((rate * n as f64).round() as usize).clamp(1, n);
    let mut abs: Vec<f64> = tm.rows.iter().map(|r| r.x_i.abs()).collect();
    let (_, kth, _) = abs.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Keep the rows whose trigger quadrature satisfies |x_I| <= X and report
/// the mode-II statistics before and after.
///
/// Ties at the window edge are accepted (<=); the choice is measure-zero and
/// fixed for bit-reproducibility.
pub fn condition(tm: &TwoModeEnsemble, rule: &SelectionRule) -> Result<PurifiedResult> {
    rule.validate()?;
    let threshold = match *rule {
        SelectionRule::Threshold { x } => x,
        SelectionRule::TargetRate { rate } => threshold_from_rate(tm, rate)?,
    };

    let kept: Vec<TwoModeRow> = tm
        .rows
        .iter()
        .copied()
        .filter(|r| r.x_i.abs() <= threshold)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySelection { threshold });
    }
    let survival_rate = kept.len() as f64 / tm.len() as f64;

    let all_x: Vec<f64> = tm.rows.iter().map(|r| r.x_ii).collect();
    let all_p: Vec<f64> = tm.rows.iter().map(|r| r.p_ii).collect();
    let input_stats = QuadVariances {
        x: variance_with_se(&all_x)?,
        p: variance_with_se(&all_p)?,
    };
    let sel_x: Vec<f64> = kept.iter().map(|r| r.x_ii).collect();
    let sel_p: Vec<f64> = kept.iter().map(|r| r.p_ii).collect();
    let output_stats = QuadVariances {
        x: variance_with_se(&sel_x)?,
        p: variance_with_se(&sel_p)?,
    };

    let points: Vec<QuadPoint> = kept
        .iter()
        .map(|r| QuadPoint {
            x: r.x_ii,
            p: r.p_ii,
        })
        .collect();
    let survivors = Ensemble::from_generated(
        points,
        tm.merged_seed(),
        None,
        format!("{} | conditioned(|x_I| <= {threshold})", tm.provenance),
    );
    let selected = TwoModeEnsemble {
        rows: kept,
        seed_a: tm.seed_a,
        seed_b: tm.seed_b,
        provenance: format!("{} | conditioned(|x_I| <= {threshold})", tm.provenance),
    };

    Ok(PurifiedResult {
        survivors,
        selected,
        survival_rate,
        threshold,
        input_stats,
        output_stats,
        input_covariance: None,
    })
}

/// One full protocol round: mix two copies, then condition on mode I.
///
/// Also records the unconditioned two-mode covariance (when the pair holds
/// at least 10^4 rows), whose Gaussian log-negativity diagnoses the
/// correlations between the splitter outputs.
pub fn purify_round(a: &Ensemble, b: &Ensemble, rule: &SelectionRule) -> Result<PurifiedResult> {
    let tm = beam_split(a, b)?;
    let input_covariance = if tm.len() >= 10_000 {
        Some(covariance4(&tm)?)
    } else {
        None
    };
    let mut result = condition(&tm, rule)?;
    result.input_covariance = input_covariance;
    Ok(result)
}

// Substream labels for the deterministic seed tree of `iterate_purify`.
const LABEL_GEN: u64 = 1;
const LABEL_NOISE: u64 = 2;
const LABEL_SHUFFLE: u64 = 3;
const LABEL_LOSS: u64 = 4;

/// Seed for drawing pipeline `pipeline`'s initial squeezed samples.
pub fn arm_generation_seed(seed: u64, pipeline: u64) -> StreamSeed {
    StreamSeed::new(seed).child(pipeline).child(LABEL_GEN)
}

/// Seed for pipeline `pipeline`'s phase-noise channel.
pub fn arm_noise_seed(seed: u64, pipeline: u64) -> StreamSeed {
    StreamSeed::new(seed).child(pipeline).child(LABEL_NOISE)
}

/// Seed for pipeline `pipeline`'s loss channel.
pub fn arm_loss_seed(seed: u64, pipeline: u64) -> StreamSeed {
    StreamSeed::new(seed).child(pipeline).child(LABEL_LOSS)
}

fn shuffle_seed(seed: u64, round: u64, slot: u64) -> StreamSeed {
    StreamSeed::new(seed)
        .child(LABEL_SHUFFLE)
        .child(round)
        .child(slot)
}

/// Generate one protocol arm: sample the squeezed state, apply the phase
/// noise, then apply loss (if any). Even pipelines take `eta_a`, odd take
/// `eta_b`, matching the two physical arms.
pub fn prepare_arm(
    spec: &SqueezedStateSpec,
    noise: &PhaseNoiseSpec,
    loss: Option<&LossSpec>,
    n: usize,
    seed: u64,
    pipeline: u64,
) -> Result<Ensemble> {
    let ens = sample_squeezed(spec, n, arm_generation_seed(seed, pipeline))?;
    let noisy = match *noise {
        PhaseNoiseSpec::GaussianIid { sigma } => {
            apply_gaussian_phase_diffusion(&ens, sigma, arm_noise_seed(seed, pipeline))?
        }
        PhaseNoiseSpec::Bandlimited {
            sigma,
            f_lo,
            f_hi,
            fs,
        } => {
            let series = bandlimited_phase_series(
                n,
                fs,
                (f_lo, f_hi),
                sigma,
                arm_noise_seed(seed, pipeline),
            )?;
            apply_phase_series(&ens, &series)?
        }
    };
    match loss {
        None => Ok(noisy),
        Some(l) => {
            let eta = if pipeline.is_multiple_of(2) {
                l.eta_a
            } else {
                l.eta_b
            };
            apply_loss(&noisy, eta, arm_loss_seed(seed, pipeline))
        }
    }
}

/// Reorder survivor points with a round/slot-specific substream so that the
/// next round pairs samples independently of their selection order.
fn shuffled_truncated(ens: &Ensemble, keep: usize, seed: u64, round: u64, slot: u64) -> Ensemble {
    let mut pts = ens.points().to_vec();
    let mut rng = shuffle_seed(seed, round, slot).rng(0);
    pts.shuffle(&mut rng);
    pts.truncate(keep);
    Ensemble::from_generated(
        pts,
        ens.seed_fingerprint(),
        ens.noise_series_fingerprint(),
        format!("{} | shuffled", ens.provenance()),
    )
}

// Fewest survivors an ensemble may carry into a further round.
const MIN_INTERMEDIATE_SURVIVORS: usize = 16;
// Cap on total generated samples (pipelines * n) to keep memory bounded.
const MAX_TOTAL_SAMPLES: usize = 1 << 26;

/// Run `rounds` purification rounds from scratch.
///
/// `2^rounds` independent pipelines (disjoint seed substreams) are generated
/// and consumed pairwise; each later round re-pairs the survivor ensembles
/// after independent index shuffles, truncating pairs to equal length.
/// `rounds = 0` returns just the diffused input statistics. `rules` must
/// have exactly one entry per round. Loss, if given, is applied per arm
/// after the phase noise (the channels commute with phase averaging, so the
/// order is a convention).
///
/// Fails up front if the expected final survivor count `n * prod(rates)`
/// falls below 10^3, and at runtime if any round starves.
pub fn iterate_purify(
    spec: &SqueezedStateSpec,
    noise: &PhaseNoiseSpec,
    rounds: usize,
    rules: &[SelectionRule],
    loss: Option<&LossSpec>,
    n: usize,
    seed: u64,
) -> Result<IterationOutcome> {
    noise.validate()?;
    if let Some(l) = loss {
        l.validate()?;
    }
    if rules.len() != rounds {
        return Err(Error::InvalidParameter {
            name: "rules",
            value: rules.len() as f64,
            reason: "need exactly one selection rule per round",
        });
    }
    for rule in rules {
        rule.validate()?;
    }
    let pipelines = 1usize
        .checked_shl(rounds as u32)
        .filter(|p| p.saturating_mul(n) <= MAX_TOTAL_SAMPLES)
        .ok_or(Error::InvalidParameter {
            name: "rounds",
            value: rounds as f64,
            reason: "2^rounds * n exceeds the supported sample budget",
        })?;
    let mut expected = n as f64;
    for rule in rules {
        if let SelectionRule::TargetRate { rate } = rule {
            expected *= rate;
        }
    }
    if expected < 1000.0 {
        return Err(Error::InsufficientSamples {
            context: "iterate_purify: expected final survivors",
            needed: 1000,
            got: expected as usize,
        });
    }

    let mut diffused: Option<Ensemble> = None;
    let mut current: Vec<Ensemble> = Vec::with_capacity(pipelines / 2);
    let mut outcomes: Vec<RoundOutcome> = Vec::with_capacity(rounds);

    if rounds == 0 {
        let arm = prepare_arm(spec, noise, loss, n, seed, 0)?;
        return Ok(IterationOutcome {
            diffused: arm,
            rounds: vec![],
        });
    }

    for (ri, rule) in rules.iter().enumerate() {
        let round = ri + 1;
        let pairs = 1usize << (rounds - round);
        let mut next: Vec<Ensemble> = Vec::with_capacity(pairs);
        for pair in 0..pairs {
            let (ens_a, ens_b) = if round == 1 {
                let a = prepare_arm(spec, noise, loss, n, seed, (2 * pair) as u64)?;
                let b = prepare_arm(spec, noise, loss, n, seed, (2 * pair + 1) as u64)?;
                if pair == 0 {
                    diffused = Some(a.clone());
                }
                (a, b)
            } else {
                let a = &current[2 * pair];
                let b = &current[2 * pair + 1];
                let keep = a.len().min(b.len());
                (
                    shuffled_truncated(a, keep, seed, round as u64, (2 * pair) as u64),
                    shuffled_truncated(b, keep, seed, round as u64, (2 * pair + 1) as u64),
                )
            };
            let result = purify_round(&ens_a, &ens_b, rule)?;
            let survivors = result.survivors.len();
            if round < rounds && survivors < MIN_INTERMEDIATE_SURVIVORS {
                return Err(Error::SurvivorStarvation { round, survivors });
            }
            if pair == 0 {
                outcomes.push(RoundOutcome {
                    round,
                    threshold: result.threshold,
                    survival_rate: result.survival_rate,
                    input_stats: result.input_stats,
                    output_stats: result.output_stats,
                    survivors: result.survivors.clone(),
                    selected: result.selected,
                    input_covariance: result.input_covariance,
                });
            }
            next.push(result.survivors);
        }
        current = next;
    }

    Ok(IterationOutcome {
        diffused: diffused.expect("rounds >= 1 sets the lead diffused arm"),
        rounds: outcomes,
    })
}
