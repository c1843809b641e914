//! Experiment plumbing: JSON config ingestion, anti-squeezing calibration,
//! run execution, parameter sweeps, and CSV persistence.
//!
//! Reproducibility contract: a (config, seed) pair determines every CSV byte,
//! independent of thread count. Numeric cells use Rust's shortest
//! round-trip float formatting; column order is fixed; sweep points derive
//! their seeds from the swept parameter *values*, so deleting a grid point
//! never changes any other row.

use crate::channels::{LossSpec, PhaseNoiseSpec};
use crate::error::{Error, Result};
use crate::phase_space::{db_of, diffused_variances, spec_from_db, SqueezedStateSpec};
use crate::protocol::{iterate_purify, IterationOutcome, SelectionRule};
use crate::rng::StreamSeed;
use crate::stats::{
    bootstrap_variance_se, chi2_default_bins, excess_kurtosis, gaussian_chi2_reduced,
    log_negativity, variance_with_se,
};
use crate::wigner::Grid2D;
use serde::de::Deserializer;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Version stamp carried by configs and CSV rows.
pub const SCHEMA_VERSION: u32 = 1;
/// Directly observed squeezing used by the default calibration (dB).
pub const DEFAULT_SQUEEZE_DB: f64 = 3.55;
/// Phase-noise width the default calibration targets (radians).
pub const DEFAULT_SIGMA: f64 = 0.304;
/// Variance product the default calibration reproduces after diffusion.
pub const DEFAULT_VARIANCE_PRODUCT: f64 = 7.6;
/// Default samples per arm.
pub const DEFAULT_SAMPLES: usize = 1_000_000;
/// Smallest accepted samples-per-arm setting.
pub const MIN_SAMPLES: usize = 10_000;
/// Default bootstrap resample count for CSV standard errors.
pub const DEFAULT_RESAMPLES: usize = 1000;

/// Initial squeezed state, either as direct variances or as decibel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StateConfig {
    Variances {
        vx: f64,
        vp: f64,
    },
    Decibels {
        squeeze_db: f64,
        antisqueeze_db: f64,
    },
}

/// Raw deserialization target so unknown keys are rejected across both
/// state spellings.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRaw {
    #[serde(default)]
    vx: Option<f64>,
    #[serde(default)]
    vp: Option<f64>,
    #[serde(default)]
    squeeze_db: Option<f64>,
    #[serde(default)]
    antisqueeze_db: Option<f64>,
}

impl<'de> Deserialize<'de> for StateConfig {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = StateRaw::deserialize(de)?;
        match (raw.vx, raw.vp, raw.squeeze_db, raw.antisqueeze_db) {
            (Some(vx), Some(vp), None, None) => Ok(StateConfig::Variances { vx, vp }),
            (None, None, Some(s), Some(a)) => Ok(StateConfig::Decibels {
                squeeze_db: s,
                antisqueeze_db: a,
            }),
            _ => Err(serde::de::Error::custom(
                "state must be either {vx, vp} or {squeeze_db, antisqueeze_db}",
            )),
        }
    }
}

impl StateConfig {
    pub fn resolve(&self) -> Result<SqueezedStateSpec> {
        match *self {
            StateConfig::Variances { vx, vp } => SqueezedStateSpec::new(vx, vp),
            StateConfig::Decibels {
                squeeze_db,
                antisqueeze_db,
            } => spec_from_db(squeeze_db, antisqueeze_db),
        }
    }
}

fn default_noise() -> PhaseNoiseSpec {
    PhaseNoiseSpec::GaussianIid {
        sigma: DEFAULT_SIGMA,
    }
}

fn default_selection() -> SelectionRule {
    SelectionRule::TargetRate { rate: 0.5 }
}

fn default_rounds() -> usize {
    1
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

/// One experiment: state preparation, noise, optional loss, selection, and
/// execution parameters. Loaded from versioned JSON with unknown keys
/// rejected; omitted fields take the defaults listed on each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema_version: u32,
    /// Initial state; omitted = the default calibrated state
    /// ([`default_calibrated_spec`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateConfig>,
    /// Phase-noise model (default: Gaussian i.i.d., sigma = 0.304).
    #[serde(default = "default_noise")]
    pub noise: PhaseNoiseSpec,
    /// Optional per-arm loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    /// Selection rule applied in every round (default: keep half).
    #[serde(default = "default_selection")]
    pub selection: SelectionRule,
    /// Purification rounds; 0 reports the diffused input only (default 1).
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Samples per arm (default 10^6, minimum 10^4).
    #[serde(default = "default_samples")]
    pub n: usize,
    /// Master seed (default 0).
    #[serde(default)]
    pub seed: u64,
    /// Bootstrap resamples behind the CSV standard errors (default 1000).
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Where the CLI writes the CSV (stdout when omitted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            state: None,
            noise: default_noise(),
            loss: None,
            selection: default_selection(),
            rounds: default_rounds(),
            n: default_samples(),
            seed: 0,
            bootstrap_resamples: default_resamples(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n < MIN_SAMPLES {
            return Err(Error::InsufficientSamples {
                context: "config: n (samples per arm)",
                needed: MIN_SAMPLES,
                got: self.n,
            });
        }
        if self.bootstrap_resamples < 100 {
            return Err(Error::InvalidParameter {
                name: "bootstrap_resamples",
                value: self.bootstrap_resamples as f64,
                reason: "need at least 100 resamples for stable error bars",
            });
        }
        self.noise.validate()?;
        if let Some(loss) = &self.loss {
            loss.validate()?;
        }
        self.selection.validate()?;
        self.resolve_state()?;
        Ok(())
    }

    /// The squeezed-state spec this config runs with.
    pub fn resolve_state(&self) -> Result<SqueezedStateSpec> {
        match &self.state {
            Some(state) => state.resolve(),
            None => default_calibrated_spec(),
        }
    }
}

/// Anti-squeezing variance that makes the diffused variance product hit
/// `target_product` for a given squeezed variance and phase-noise width.
///
/// The product is strictly increasing in `vp` on the physical branch
/// `vp >= max(vx, 1/vx)`, so bisection converges; a target below the
/// branch minimum is reported as infeasible. `sigma = 0` reduces to exact
/// division (the product is then `vx * vp`).
pub fn calibrate_vp(vx: f64, sigma: f64, target_product: f64) -> Result<f64> {
    if !vx.is_finite() || vx <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "vx",
            value: vx,
            reason: "squeezed variance must be finite and positive",
        });
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
            reason: "phase-noise width must be finite and >= 0 (radians)",
        });
    }
    if !target_product.is_finite() || target_product < 1.0 {
        return Err(Error::InvalidParameter {
            name: "target_product",
            value: target_product,
            reason: "variance products below 1 violate the uncertainty relation",
        });
    }

    let product_at = |vp: f64| -> Result<f64> {
        let spec = SqueezedStateSpec::new(vx, vp)?;
        let (vx_d, vp_d) = diffused_variances(&spec, sigma);
        Ok(vx_d * vp_d)
    };

    // Physical branch: vp >= vx keeps the root unique, vp >= 1/vx keeps the
    // input state physical.
    let lo_edge = vx.max(1.0 / vx);
    if sigma == 0.0 {
        let vp = target_product / vx;
        if vp < lo_edge {
            return Err(Error::InfeasibleCalibration {
                vx,
                target: target_product,
                minimum: vx * lo_edge,
            });
        }
        return Ok(vp);
    }

    let minimum = product_at(lo_edge)?;
    let rel = |p: f64| (p - target_product) / target_product;
    if rel(minimum) > 1e-9 {
        return Err(Error::InfeasibleCalibration {
            vx,
            target: target_product,
            minimum,
        });
    }

    let mut lo = lo_edge;
    let mut hi = lo_edge.max(target_product / vx);
    let mut guard = 0;
    while product_at(hi)? < target_product {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::InfeasibleCalibration {
                vx,
                target: target_product,
                minimum,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if product_at(mid)? < target_product {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    let vp = 0.5 * (lo + hi);
    debug_assert!(rel(product_at(vp)?).abs() < 1e-9);
    Ok(vp)
}

/// The default state: squeezing fixed at the directly observed 3.55 dB,
/// anti-squeezing calibrated so the sigma = 0.304 diffused variance product
/// is 7.6.
pub fn default_calibrated_spec() -> Result<SqueezedStateSpec> {
    let vx = 10f64.powf(-DEFAULT_SQUEEZE_DB / 10.0);
    let vp = calibrate_vp(vx, DEFAULT_SIGMA, DEFAULT_VARIANCE_PRODUCT)?;
    SqueezedStateSpec::new(vx, vp)
}

/// One CSV row: the statistics of one purification round (or of the
/// diffused input when `round = 0`), or a sweep point's error record.
///
/// "in" columns describe what entered the round: the diffused arm for round
/// 1, the previous round's survivors for later rounds. "out" columns
/// describe the surviving mode-II ensemble. Standard errors are bootstrap
/// estimates (resample count from the config). `db_*` is `10 log10(V)`, so
/// squeezing below vacuum is negative. `log_negativity` diagnoses the
/// unconditioned splitter output (a Gaussian state); `chi2_*` cells are
/// empty when the sample is too small for the fixed-floor histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub schema_version: u32,
    pub round: usize,
    pub sigma: f64,
    pub threshold_x: Option<f64>,
    pub survival_rate: Option<f64>,
    /// Samples behind the "in" columns.
    pub n: usize,
    pub seed: u64,
    pub var_x_in: Option<f64>,
    pub se_var_x_in: Option<f64>,
    pub var_p_in: Option<f64>,
    pub se_var_p_in: Option<f64>,
    pub var_x_out: Option<f64>,
    pub se_var_x_out: Option<f64>,
    pub var_p_out: Option<f64>,
    pub se_var_p_out: Option<f64>,
    pub var_product_in: Option<f64>,
    pub var_product_out: Option<f64>,
    pub kurtosis_in: Option<f64>,
    pub kurtosis_out: Option<f64>,
    pub chi2_red_in: Option<f64>,
    pub chi2_red_out: Option<f64>,
    pub db_x_in: Option<f64>,
    pub db_x_out: Option<f64>,
    pub log_negativity: Option<f64>,
    pub error: Option<String>,
}

impl RunResult {
    fn empty(config: &ExperimentConfig) -> Self {
        RunResult {
            schema_version: SCHEMA_VERSION,
            round: 0,
            sigma: config.noise.sigma(),
            threshold_x: None,
            survival_rate: None,
            n: config.n,
            seed: config.seed,
            var_x_in: None,
            se_var_x_in: None,
            var_p_in: None,
            se_var_p_in: None,
            var_x_out: None,
            se_var_x_out: None,
            var_p_out: None,
            se_var_p_out: None,
            var_product_in: None,
            var_product_out: None,
            kurtosis_in: None,
            kurtosis_out: None,
            chi2_red_in: None,
            chi2_red_out: None,
            db_x_in: None,
            db_x_out: None,
            log_negativity: None,
            error: None,
        }
    }
}

/// Everything a run produced: the CSV rows plus the structured outcome for
/// further analysis.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<RunResult>,
    pub outcome: IterationOutcome,
}

// Substream label separating bootstrap draws from the protocol's own tree.
const LABEL_BOOTSTRAP: u64 = 0xB007;

fn bootstrap_seed(seed: u64, round: usize, column: u64) -> StreamSeed {
    StreamSeed::new(seed)
        .child(LABEL_BOOTSTRAP)
        .child(round as u64)
        .child(column)
}

/// Variance/shape statistics of one ensemble side ("in" or "out") of a row.
struct SideStats {
    var_x: f64,
    se_var_x: f64,
    var_p: f64,
    se_var_p: f64,
    kurtosis: f64,
    chi2: Option<f64>,
    db_x: f64,
}

fn side_stats(
    xs: &[f64],
    ps: &[f64],
    bins: usize,
    resamples: usize,
    seed: StreamSeed,
) -> Result<SideStats> {
    let var_x = variance_with_se(xs)?.value;
    let var_p = variance_with_se(ps)?.value;
    let se_var_x = bootstrap_variance_se(xs, resamples, seed.child(0))?;
    let se_var_p = bootstrap_variance_se(ps, resamples, seed.child(1))?;
    let kurtosis = excess_kurtosis(xs)?;
    // A too-small or too-spread sample simply has no chi-squared cell; any
    // other failure would indicate degenerate data and surfaces above.
    let chi2 = gaussian_chi2_reduced(xs, bins).ok();
    Ok(SideStats {
        var_x,
        se_var_x,
        var_p,
        se_var_p,
        kurtosis,
        chi2,
        db_x: db_of(var_x),
    })
}

fn rows_from_outcome(
    config: &ExperimentConfig,
    outcome: &IterationOutcome,
) -> Result<Vec<RunResult>> {
    let resamples = config.bootstrap_resamples;
    let mut rows = Vec::with_capacity(outcome.rounds.len().max(1));

    if outcome.rounds.is_empty() {
        let xs = outcome.diffused.xs();
        let ps = outcome.diffused.ps();
        let bins = chi2_default_bins(xs.len());
        let side = side_stats(&xs, &ps, bins, resamples, bootstrap_seed(config.seed, 0, 0))?;
        let mut row = RunResult::empty(config);
        row.n = xs.len();
        row.var_x_in = Some(side.var_x);
        row.se_var_x_in = Some(side.se_var_x);
        row.var_p_in = Some(side.var_p);
        row.se_var_p_in = Some(side.se_var_p);
        row.var_product_in = Some(side.var_x * side.var_p);
        row.kurtosis_in = Some(side.kurtosis);
        row.chi2_red_in = side.chi2;
        row.db_x_in = Some(side.db_x);
        // No selection happened: the output IS the input, identically.
        row.var_x_out = row.var_x_in;
        row.se_var_x_out = row.se_var_x_in;
        row.var_p_out = row.var_p_in;
        row.se_var_p_out = row.se_var_p_in;
        row.var_product_out = row.var_product_in;
        row.kurtosis_out = row.kurtosis_in;
        row.chi2_red_out = row.chi2_red_in;
        row.db_x_out = row.db_x_in;
        rows.push(row);
        return Ok(rows);
    }

    for (i, round) in outcome.rounds.iter().enumerate() {
        let (in_xs, in_ps) = if i == 0 {
            (outcome.diffused.xs(), outcome.diffused.ps())
        } else {
            let prev = &outcome.rounds[i - 1].survivors;
            (prev.xs(), prev.ps())
        };
        let out_xs = round.survivors.xs();
        let out_ps = round.survivors.ps();
        // One bin count per row so the in/out chi-squared values compare
        // like for like.
        let bins = chi2_default_bins(in_xs.len().min(out_xs.len()));
        let in_side = side_stats(
            &in_xs,
            &in_ps,
            bins,
            resamples,
            bootstrap_seed(config.seed, round.round, 0),
        )?;
        let out_side = side_stats(
            &out_xs,
            &out_ps,
            bins,
            resamples,
            bootstrap_seed(config.seed, round.round, 1),
        )?;
        let log_neg = match &round.input_covariance {
            Some(cov) => Some(log_negativity(cov)?),
            None => None,
        };

        let mut row = RunResult::empty(config);
        row.round = round.round;
        row.threshold_x = Some(round.threshold);
        row.survival_rate = Some(round.survival_rate);
        row.n = in_xs.len();
        row.var_x_in = Some(in_side.var_x);
        row.se_var_x_in = Some(in_side.se_var_x);
        row.var_p_in = Some(in_side.var_p);
        row.se_var_p_in = Some(in_side.se_var_p);
        row.var_x_out = Some(out_side.var_x);
        row.se_var_x_out = Some(out_side.se_var_x);
        row.var_p_out = Some(out_side.var_p);
        row.se_var_p_out = Some(out_side.se_var_p);
        row.var_product_in = Some(in_side.var_x * in_side.var_p);
        row.var_product_out = Some(out_side.var_x * out_side.var_p);
        row.kurtosis_in = Some(in_side.kurtosis);
        row.kurtosis_out = Some(out_side.kurtosis);
        row.chi2_red_in = in_side.chi2;
        row.chi2_red_out = out_side.chi2;
        row.db_x_in = Some(in_side.db_x);
        row.db_x_out = Some(out_side.db_x);
        row.log_negativity = log_neg;
        rows.push(row);
    }
    Ok(rows)
}

/// Execute one configured experiment.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let spec = config.resolve_state()?;
    let rules = vec![config.selection; config.rounds];
    let outcome = iterate_purify(
        &spec,
        &config.noise,
        config.rounds,
        &rules,
        config.loss.as_ref(),
        config.n,
        config.seed,
    )?;
    let rows = rows_from_outcome(config, &outcome)?;
    Ok(RunOutput { rows, outcome })
}

/// Which knob a sweep axis varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Phase-noise width (radians).
    Sigma,
    /// Target survival rate.
    Rate,
    /// Selection window on |x_I|.
    Threshold,
}

impl SweepParam {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "sigma" => Ok(SweepParam::Sigma),
            "rate" => Ok(SweepParam::Rate),
            "x" => Ok(SweepParam::Threshold),
            other => Err(Error::Config(format!(
                "unknown sweep parameter `{other}` (expected sigma, rate, or x)"
            ))),
        }
    }

    fn label(self) -> u64 {
        match self {
            SweepParam::Sigma => 1,
            SweepParam::Rate => 2,
            SweepParam::Threshold => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Sigma => "sigma",
            SweepParam::Rate => "rate",
            SweepParam::Threshold => "x",
        }
    }
}

/// One swept axis: a parameter and its values, in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// A cartesian sweep grid, row order = rightmost axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axes: Vec<SweepAxis>,
}

impl SweepGrid {
    /// Parse `"sigma=0:0.05:0.5"` (inclusive start:step:stop) or
    /// `"rate=0.1,0.5,0.9"` (list); axes joined with `;`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for part in text.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (name, vals) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "sweep axis `{part}` is not of the form name=values"
                ))
            })?;
            let param = SweepParam::parse(name.trim())?;
            if axes.iter().any(|a: &SweepAxis| a.param == param) {
                return Err(Error::Config(format!(
                    "sweep parameter `{}` given twice",
                    param.name()
                )));
            }
            let values = parse_axis_values(vals.trim())?;
            axes.push(SweepAxis { param, values });
        }
        if axes.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        Ok(SweepGrid { axes })
    }

    /// All grid points in row order.
    pub fn points(&self) -> Vec<Vec<(SweepParam, f64)>> {
        let mut points: Vec<Vec<(SweepParam, f64)>> = vec![vec![]];
        for axis in &self.axes {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for stem in &points {
                for &v in &axis.values {
                    let mut p = stem.clone();
                    p.push((axis.param, v));
                    next.push(p);
                }
            }
            points = next;
        }
        points
    }
}

fn parse_axis_values(text: &str) -> Result<Vec<f64>> {
    let bad = |t: &str| Error::Config(format!("cannot parse sweep value `{t}`"));
    let values: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "range `{text}` must be start:step:stop"
            )));
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad(parts[0]))?;
        let step: f64 = parts[1].trim().parse().map_err(|_| bad(parts[1]))?;
        let stop: f64 = parts[2].trim().parse().map_err(|_| bad(parts[2]))?;
        if !(start.is_finite() && step.is_finite() && stop.is_finite()) || step <= 0.0 {
            return Err(Error::Config(format!(
                "range `{text}` needs finite bounds and a positive step"
            )));
        }
        if stop < start {
            return Err(Error::Config(format!("range `{text}` runs backwards")));
        }
        // Index-based generation avoids accumulating rounding drift.
        let count = ((stop - start) / step + 1.0 + 1e-9).floor() as usize;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        text.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad(t)))
            .collect::<Result<_>>()?
    };
    if values.is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("sweep value {v} is not finite")));
    }
    Ok(values)
}

/// Run one experiment per grid point.
///
/// Each point's seed is derived from the base seed and the swept *values*
/// (not the grid position), so rows are independent of the rest of the
/// grid. A failing point contributes a row with the `error` column set and
/// the sweep continues.
pub fn sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<Vec<RunResult>> {
    base.validate()?;
    let mut rows = Vec::new();
    for point in grid.points() {
        let mut config = base.clone();
        let mut seed = StreamSeed::new(base.seed);
        for &(param, value) in &point {
            match param {
                SweepParam::Sigma => config.noise = config.noise.with_sigma(value),
                SweepParam::Rate => config.selection = SelectionRule::TargetRate { rate: value },
                SweepParam::Threshold => config.selection = SelectionRule::Threshold { x: value },
            }
            seed = seed.child(param.label()).child(value.to_bits());
        }
        config.seed = seed.fingerprint();
        match run(&config) {
            Ok(output) => rows.extend(output.rows),
            Err(e) => {
                let mut row = RunResult::empty(&config);
                row.error = Some(e.to_string());
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Fixed column order of the run CSV.
pub const RUN_CSV_HEADER: &str = "schema_version,round,sigma,threshold_x,survival_rate,n,seed,\
var_x_in,se_var_x_in,var_p_in,se_var_p_in,var_x_out,se_var_x_out,var_p_out,se_var_p_out,\
var_product_in,var_product_out,kurtosis_in,kurtosis_out,chi2_red_in,chi2_red_out,\
db_x_in,db_x_out,log_negativity,error";

fn push_f64(out: &mut String, v: f64) {
    // `{}` on f64 prints the shortest decimal that round-trips.
    out.push_str(&format!("{v}"));
}

fn push_opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        push_f64(out, v);
    }
}

fn push_escaped(out: &mut String, s: &str) {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        out.push('"');
        out.push_str(&s.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(s);
    }
}

/// Render rows as CSV (header + one line per row, `\n` separators).
pub fn run_results_to_csv(rows: &[RunResult]) -> String {
    let mut out = String::with_capacity(128 * (rows.len() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},", r.schema_version, r.round));
        push_f64(&mut out, r.sigma);
        out.push(',');
        push_opt(&mut out, r.threshold_x);
        out.push(',');
        push_opt(&mut out, r.survival_rate);
        out.push_str(&format!(",{},{},", r.n, r.seed));
        for v in [
            r.var_x_in,
            r.se_var_x_in,
            r.var_p_in,
            r.se_var_p_in,
            r.var_x_out,
            r.se_var_x_out,
            r.var_p_out,
            r.se_var_p_out,
            r.var_product_in,
            r.var_product_out,
            r.kurtosis_in,
            r.kurtosis_out,
            r.chi2_red_in,
            r.chi2_red_out,
            r.db_x_in,
            r.db_x_out,
            r.log_negativity,
        ] {
            push_opt(&mut out, v);
            out.push(',');
        }
        if let Some(e) = &r.error {
            push_escaped(&mut out, e);
        }
        out.push('\n');
    }
    out
}

pub fn write_run_csv(rows: &[RunResult], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, run_results_to_csv(rows))?;
    Ok(())
}

/// Render a Wigner grid as CSV: a named header line, a geometry line, then
/// `nx` rows of `np` density values (row-major in x).
pub fn wigner_grid_to_csv(grid: &Grid2D) -> String {
    let g = grid.geometry();
    let mut out = String::with_capacity(grid.values().len() * 20);
    out.push_str("schema_version,x_min,x_max,p_min,p_max,nx,np\n");
    out.push_str(&format!("{SCHEMA_VERSION},"));
    for v in [g.x_min(), g.x_max(), g.p_min(), g.p_max()] {
        push_f64(&mut out, v);
        out.push(',');
    }
    out.push_str(&format!("{},{}\n", g.nx(), g.np()));
    for ix in 0..g.nx() {
        for ip in 0..g.np() {
            if ip > 0 {
                out.push(',');
            }
            push_f64(&mut out, grid.value(ix, ip));
        }
        out.push('\n');
    }
    out
}

pub fn write_wigner_csv(grid: &Grid2D, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, wigner_grid_to_csv(grid))?;
    Ok(())
}
