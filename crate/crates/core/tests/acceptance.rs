//! Acceptance suite: twelve numbered criteria covering oracle agreement,
//! the purification anchors, Gaussification, monotonicity, iteration,
//! Wigner numerics, exact identities, entanglement oracles, and
//! reproducibility. Each test prints one `acceptance NN PASS` line (visible
//! with `--nocapture`) and is sized to finish well under a minute.

use quadpure::channels::apply_gaussian_phase_diffusion;
use quadpure::harness::{run, sweep, ExperimentConfig, SweepGrid};
use quadpure::phase_space::{diffused_variances, sample_squeezed, SqueezedStateSpec};
use quadpure::protocol::{beam_split, iterate_purify, purify_round, SelectionRule};
use quadpure::stats::{
    bootstrap_kurtosis_se, bootstrap_product_se, bootstrap_variance_se, covariance4,
    excess_kurtosis, log_negativity, variance_with_se, CovMatrix4,
};
use quadpure::wigner::{grid_checks, wigner_diffused_grid, wigner_sms_at, GridGeometry};
use quadpure::{calibrate_vp, Ensemble, PhaseNoiseSpec, StreamSeed};

const N: usize = 1_000_000;
const RESAMPLES: usize = 1000;

fn bench_spec() -> SqueezedStateSpec {
    SqueezedStateSpec::new(0.4416, 7.80).unwrap()
}

fn calibrated_spec() -> SqueezedStateSpec {
    let vp = calibrate_vp(0.4416, 0.304, 7.6).unwrap();
    SqueezedStateSpec::new(0.4416, vp).unwrap()
}

fn pairs_of(ens: &Ensemble) -> Vec<(f64, f64)> {
    ens.points().iter().map(|pt| (pt.x, pt.p)).collect()
}

/// The reference working point: calibrated state, sigma = 0.304, keep half.
fn anchor_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 7,
        ..ExperimentConfig::default()
    }
}

#[test]
fn acceptance_01_diffused_variance_matches_closed_form() {
    let spec = bench_spec();
    for (i, &sigma) in [0.1, 0.2, 0.304, 0.5].iter().enumerate() {
        let seed = StreamSeed::new(101).child(i as u64);
        let ens = sample_squeezed(&spec, N, seed.child(0)).unwrap();
        let diffused = apply_gaussian_phase_diffusion(&ens, sigma, seed.child(1)).unwrap();
        let xs = diffused.xs();
        let var = variance_with_se(&xs).unwrap().value;
        let se = bootstrap_variance_se(&xs, RESAMPLES, seed.child(2)).unwrap();
        let (vx_th, _) = diffused_variances(&spec, sigma);
        let z = (var - vx_th) / se;
        assert!(
            z.abs() <= 3.0,
            "sigma={sigma}: MC Var(x)={var} vs closed form {vx_th} is {z:.2} SE away"
        );
        println!(
            "acceptance 01 PASS — sigma={sigma}: MC Var(x)={var:.5} vs closed form {vx_th:.5} ({z:+.2} SE)"
        );
    }
}

#[test]
fn acceptance_02_squeezing_loss_crossover() {
    let vp = calibrate_vp(0.4416, 0.304, 7.6).unwrap();
    let spec = SqueezedStateSpec::new(0.4416, vp).unwrap();

    // Analytic: bisect Var_x(sigma) = 1 on the increasing branch.
    let var_at = |sigma: f64| diffused_variances(&spec, sigma).0;
    assert!(var_at(0.2) < 1.0 && var_at(0.4) > 1.0);
    let (mut lo, mut hi) = (0.2, 0.4);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if var_at(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let crossover = 0.5 * (lo + hi);
    assert!(
        (crossover - 0.287).abs() <= 0.02,
        "analytic crossover {crossover} not within 0.287 +/- 0.02"
    );

    // Monte Carlo brackets the same point: squeezing survives 2 hundredths
    // below the crossover and is gone 2 hundredths above it.
    let bracket = |sigma: f64, tag: u64| -> (f64, f64) {
        let seed = StreamSeed::new(202).child(tag);
        let ens = sample_squeezed(&spec, N, seed.child(0)).unwrap();
        let xs = apply_gaussian_phase_diffusion(&ens, sigma, seed.child(1))
            .unwrap()
            .xs();
        let var = variance_with_se(&xs).unwrap().value;
        let se = bootstrap_variance_se(&xs, RESAMPLES, seed.child(2)).unwrap();
        (var, se)
    };
    let (below, se_b) = bracket(crossover - 0.02, 0);
    let (above, se_a) = bracket(crossover + 0.02, 1);
    assert!(
        below + 3.0 * se_b < 1.0,
        "Var(x) at crossover-0.02 = {below} (SE {se_b}) does not stay below shot noise"
    );
    assert!(
        above - 3.0 * se_a > 1.0,
        "Var(x) at crossover+0.02 = {above} (SE {se_a}) does not exceed shot noise"
    );
    println!(
        "acceptance 02 PASS — crossover sigma*={crossover:.4} (target 0.287 +/- 0.02); \
         MC brackets: Var(x)={below:.4} below, {above:.4} above"
    );
}

#[test]
fn acceptance_03_purification_anchor() {
    let output = run(&anchor_config()).unwrap();
    let row = &output.rows[0];
    let (vin, se_in) = (row.var_x_in.unwrap(), row.se_var_x_in.unwrap());
    let (vout, se_out) = (row.var_x_out.unwrap(), row.se_var_x_out.unwrap());
    let z_in = (vin - 1.0) / se_in;
    let z_out = (1.0 - vout) / se_out;
    assert!(
        z_in >= 5.0,
        "input Var(x)={vin} exceeds shot noise by only {z_in:.1} SE (need >= 5)"
    );
    assert!(
        z_out >= 5.0,
        "purified Var(x)={vout} is below shot noise by only {z_out:.1} SE (need >= 5)"
    );
    println!(
        "acceptance 03 PASS — Var(x): input {vin:.4} (+{z_in:.0} SE above vacuum) -> \
         purified {vout:.4} ({z_out:.0} SE below vacuum) at rate {:.3}",
        row.survival_rate.unwrap()
    );
}

#[test]
fn acceptance_04_mixedness_decrease() {
    let output = run(&anchor_config()).unwrap();
    let row = &output.rows[0];
    let round = &output.outcome.rounds[0];

    let pairs_in = pairs_of(&output.outcome.diffused);
    let pairs_out = pairs_of(&round.survivors);
    let seed = StreamSeed::new(404);
    let se_in = bootstrap_product_se(&pairs_in, RESAMPLES, seed.child(0)).unwrap();
    let se_out = bootstrap_product_se(&pairs_out, RESAMPLES, seed.child(1)).unwrap();
    let se_diff = se_in.hypot(se_out);

    let prod_in = row.var_product_in.unwrap();
    let prod_out = row.var_product_out.unwrap();
    let z = (prod_in - prod_out) / se_diff;
    assert!(
        z >= 5.0,
        "variance product {prod_in} -> {prod_out} decreases by only {z:.1} SE (need >= 5)"
    );
    println!(
        "acceptance 04 PASS — variance product {prod_in:.3} -> {prod_out:.3} \
         ({z:.0} SE decrease); measured reference value 6.0 is informational \
         (detection imperfections unmodeled)"
    );
}

#[test]
fn acceptance_05_gaussification() {
    let output = run(&anchor_config()).unwrap();
    let row = &output.rows[0];
    let round = &output.outcome.rounds[0];

    let xs_in = output.outcome.diffused.xs();
    let xs_out = round.survivors.xs();
    let seed = StreamSeed::new(505);
    let k_in = excess_kurtosis(&xs_in).unwrap();
    let k_out = excess_kurtosis(&xs_out).unwrap();
    let se_in = bootstrap_kurtosis_se(&xs_in, RESAMPLES, seed.child(0)).unwrap();
    let se_out = bootstrap_kurtosis_se(&xs_out, RESAMPLES, seed.child(1)).unwrap();
    let z = (k_in.abs() - k_out.abs()) / se_in.hypot(se_out);
    assert!(
        z >= 3.0,
        "|kurtosis| {k_in} -> {k_out} decreases by only {z:.1} SE (need >= 3)"
    );

    let chi_in = row.chi2_red_in.unwrap();
    let chi_out = row.chi2_red_out.unwrap();
    assert!(
        chi_out < chi_in,
        "reduced chi-squared must strictly decrease: {chi_in} -> {chi_out}"
    );
    println!(
        "acceptance 05 PASS — |kurtosis| {:.3} -> {:.3} ({z:.0} SE); chi2_red {chi_in:.1} -> \
         {chi_out:.1}; kurtosis shrink factor {:.1} (reference factor 4 is binning-dependent, \
         informational)",
        k_in.abs(),
        k_out.abs(),
        k_in.abs() / k_out.abs()
    );
}

#[test]
fn acceptance_06_null_case_invariance() {
    let spec = SqueezedStateSpec::new(0.5, 2.0).unwrap();
    for (i, &rate) in [0.1, 0.5, 0.9].iter().enumerate() {
        let seed = StreamSeed::new(606).child(i as u64);
        let a = sample_squeezed(&spec, N, seed.child(0)).unwrap();
        let b = sample_squeezed(&spec, N, seed.child(1)).unwrap();
        let res = purify_round(&a, &b, &SelectionRule::TargetRate { rate }).unwrap();
        let vin = res.input_stats.x;
        let vout = res.output_stats.x.value;
        let se_out = bootstrap_variance_se(&res.survivors.xs(), RESAMPLES, seed.child(2)).unwrap();
        let z = (vout - vin.value) / vin.std_error.hypot(se_out);
        assert!(
            z.abs() <= 3.0,
            "rate {rate}: pure-state purified Var(x)={vout} vs unpurified {} is {z:.2} SE away",
            vin.value
        );
        println!(
            "acceptance 06 PASS — sigma=0 rate {rate}: Var(x) {:.4} -> {vout:.4} ({z:+.2} SE)",
            vin.value
        );
    }
}

#[test]
fn acceptance_07_monotonicity_suites() {
    let base = ExperimentConfig {
        seed: 77,
        ..ExperimentConfig::default()
    };

    // Survival rate non-decreasing in the window half-width X.
    let rows = sweep(&base, &SweepGrid::parse("x=0.2:0.2:2.0").unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    for w in rows.windows(2) {
        let (r0, r1) = (w[0].survival_rate.unwrap(), w[1].survival_rate.unwrap());
        let se = |r: f64| (r * (1.0 - r) / N as f64).sqrt();
        assert!(
            r1 >= r0 - 3.0 * se(r0).hypot(se(r1)),
            "survival rate fell from {r0} to {r1} along the X grid"
        );
    }
    let span = (
        rows[0].survival_rate.unwrap(),
        rows[9].survival_rate.unwrap(),
    );

    // Purified Var(x) non-decreasing in survival rate across 10 points.
    let rows = sweep(&base, &SweepGrid::parse("rate=0.1:0.1:1.0").unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    for w in rows.windows(2) {
        let (v0, v1) = (w[0].var_x_out.unwrap(), w[1].var_x_out.unwrap());
        let tol = 3.0 * w[0].se_var_x_out.unwrap().hypot(w[1].se_var_x_out.unwrap());
        assert!(
            v1 >= v0 - tol,
            "purified Var(x) fell from {v0} to {v1} (beyond {tol}) along the rate grid"
        );
    }
    println!(
        "acceptance 07 PASS — survival rate {:.3} -> {:.3} over X in [0.2, 2.0]; \
         purified Var(x) {:.3} -> {:.3} over rate in [0.1, 1.0], both monotone within 3 SE",
        span.0,
        span.1,
        rows[0].var_x_out.unwrap(),
        rows[9].var_x_out.unwrap()
    );
}

#[test]
fn acceptance_08_two_round_iteration() {
    let noise = PhaseNoiseSpec::GaussianIid { sigma: 0.4 };
    let rules = vec![SelectionRule::TargetRate { rate: 0.5 }; 2];
    let outcome = iterate_purify(&calibrated_spec(), &noise, 2, &rules, None, N, 808).unwrap();
    assert_eq!(outcome.rounds.len(), 2);
    let (r1, r2) = (&outcome.rounds[0], &outcome.rounds[1]);

    let v1 = r1.output_stats.x.value;
    let v2 = r2.output_stats.x.value;
    let seed = StreamSeed::new(809);
    let se1 = bootstrap_variance_se(&r1.survivors.xs(), RESAMPLES, seed.child(1)).unwrap();
    let se2 = bootstrap_variance_se(&r2.survivors.xs(), RESAMPLES, seed.child(2)).unwrap();
    assert!(
        v2 <= v1 + 3.0 * se1.hypot(se2),
        "round-2 Var(x)={v2} exceeds round-1 Var(x)={v1} beyond 3 SE"
    );

    let k1 = excess_kurtosis(&r1.survivors.xs()).unwrap();
    let k2 = excess_kurtosis(&r2.survivors.xs()).unwrap();
    assert!(
        k2.abs() <= k1.abs(),
        "|kurtosis| grew across rounds: {k1} -> {k2}"
    );
    println!(
        "acceptance 08 PASS — sigma=0.4, rate 0.5: Var(x) round 1 {v1:.4} -> round 2 {v2:.4}; \
         |kurtosis| {:.3} -> {:.3}",
        k1.abs(),
        k2.abs()
    );
}

#[test]
fn acceptance_09_wigner_numerics() {
    // Representative diffused state: mass and marginal variance.
    let spec = calibrated_spec();
    let sigma = 0.304;
    let (vx_th, vp_th) = diffused_variances(&spec, sigma);
    let reach = 6.0 * vp_th.max(vx_th).sqrt() + 0.5;
    let geom = GridGeometry::centered(reach, reach, 201, 201).unwrap();
    let grid = wigner_diffused_grid(&spec, sigma, &geom).unwrap();
    let checks = grid_checks(&grid).unwrap();
    assert!(
        (checks.mass - 1.0).abs() <= 1e-6,
        "grid mass {} strays from 1",
        checks.mass
    );
    assert!(
        (checks.var_x - vx_th).abs() <= 1e-3,
        "grid Var(x) {} vs closed form {vx_th}",
        checks.var_x
    );

    // sigma = 0 reduces to the pure squeezed Gaussian pointwise.
    let pure_geom = GridGeometry::centered(18.0, 18.0, 101, 101).unwrap();
    let pure = wigner_diffused_grid(&spec, 0.0, &pure_geom).unwrap();
    let g = pure.geometry();
    for ix in 0..g.nx() {
        for ip in 0..g.np() {
            let want = wigner_sms_at(&spec, g.x_at(ix), g.p_at(ip));
            assert!(
                (pure.value(ix, ip) - want).abs() <= 1e-10,
                "sigma=0 grid deviates at ({ix},{ip})"
            );
        }
    }

    // Strong-diffusion parameters from the phase-space illustration.
    let strong = SqueezedStateSpec::new(0.1, 10.0).unwrap();
    let (svx, svp) = diffused_variances(&strong, 0.523);
    let reach = 6.0 * svp.max(svx).sqrt() + 0.5;
    let geom = GridGeometry::centered(reach, reach, 201, 201).unwrap();
    let sgrid = wigner_diffused_grid(&strong, 0.523, &geom).unwrap();
    let schecks = grid_checks(&sgrid).unwrap();
    assert!(
        (schecks.var_x - 2.186).abs() <= 1e-3,
        "strong-diffusion Var(x) {} vs 2.186",
        schecks.var_x
    );
    println!(
        "acceptance 09 PASS — mass {:.8}; Var(x) grid {:.5} vs closed form {vx_th:.5}; \
         sigma=0 pointwise <= 1e-10; strong-diffusion Var(x) {:.4} vs 2.186",
        checks.mass, checks.var_x, schecks.var_x
    );
}

#[test]
fn acceptance_10_beam_splitter_identity() {
    let seed = StreamSeed::new(1010);
    let cases: [(SqueezedStateSpec, f64); 3] = [
        (calibrated_spec(), 0.304),
        (SqueezedStateSpec::vacuum(), 0.0),
        (SqueezedStateSpec::new(0.1, 10.0).unwrap(), 0.523),
    ];
    for (i, (spec, sigma)) in cases.iter().enumerate() {
        let s = seed.child(i as u64);
        let make = |tag: u64| -> Ensemble {
            let ens = sample_squeezed(spec, N, s.child(tag)).unwrap();
            apply_gaussian_phase_diffusion(&ens, *sigma, s.child(tag + 2)).unwrap()
        };
        let (a, b) = (make(0), make(1));
        let var = |v: &[f64]| variance_with_se(v).unwrap().value;
        let sum_in_x = var(&a.xs()) + var(&b.xs());
        let sum_in_p = var(&a.ps()) + var(&b.ps());
        let tm = beam_split(&a, &b).unwrap();
        let (mut xi, mut pi, mut xii, mut pii) = (vec![], vec![], vec![], vec![]);
        for r in tm.rows() {
            xi.push(r.x_i);
            pi.push(r.p_i);
            xii.push(r.x_ii);
            pii.push(r.p_ii);
        }
        let sum_out_x = var(&xi) + var(&xii);
        let sum_out_p = var(&pi) + var(&pii);
        let rel_x = (sum_out_x / sum_in_x - 1.0).abs();
        let rel_p = (sum_out_p / sum_in_p - 1.0).abs();
        assert!(
            rel_x <= 1e-10 && rel_p <= 1e-10,
            "case {i}: variance sums drift by ({rel_x:e}, {rel_p:e})"
        );
        println!("acceptance 10 PASS — case {i}: Var sums conserved to ({rel_x:.1e}, {rel_p:.1e})");
    }
}

#[test]
fn acceptance_11_log_negativity_oracles() {
    // Vacuum: exactly separable, exactly zero.
    let vac = CovMatrix4::from_matrix(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
        N,
    )
    .unwrap();
    assert_eq!(log_negativity(&vac).unwrap(), 0.0);

    // Orthogonally squeezed pure inputs entangle the outputs: nu~ = 0.5.
    let seed = StreamSeed::new(1111);
    let sq_x = SqueezedStateSpec::new(0.5, 2.0).unwrap();
    let sq_p = SqueezedStateSpec::new(2.0, 0.5).unwrap();
    let a = sample_squeezed(&sq_x, N, seed.child(0)).unwrap();
    let b = sample_squeezed(&sq_p, N, seed.child(1)).unwrap();
    let cov = covariance4(&beam_split(&a, &b).unwrap()).unwrap();
    let en = log_negativity(&cov).unwrap();
    assert!(
        (en - 1.0).abs() <= 0.02,
        "mixed-squeezing E_N = {en}, want 1.0 +/- 0.02"
    );

    // Identical copies: the splitter output is a product state.
    let c = sample_squeezed(&sq_x, N, seed.child(2)).unwrap();
    let d = sample_squeezed(&sq_x, N, seed.child(3)).unwrap();
    let cov_id = covariance4(&beam_split(&c, &d).unwrap()).unwrap();
    let en_id = log_negativity(&cov_id).unwrap();
    assert!(
        en_id.abs() <= 0.02,
        "identical-copy E_N = {en_id}, want 0 +/- 0.02"
    );
    println!(
        "acceptance 11 PASS — E_N: vacuum 0 exactly; mixed squeezing {en:.4} (want 1.0); \
         identical copies {en_id:.4} (want 0)"
    );
}

#[test]
fn acceptance_12_reproducibility() {
    use quadpure::harness::run_results_to_csv;

    let config = ExperimentConfig {
        n: 20_000,
        bootstrap_resamples: 200,
        seed: 1212,
        ..ExperimentConfig::default()
    };
    let csv_a = run_results_to_csv(&run(&config).unwrap().rows);
    let csv_b = run_results_to_csv(&run(&config).unwrap().rows);
    assert_eq!(csv_a, csv_b, "rerun must be byte-identical");

    // Thread count must not change a single byte.
    let pool1 = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let csv_t1 = pool1.install(|| run_results_to_csv(&run(&config).unwrap().rows));
    let csv_t4 = pool4.install(|| run_results_to_csv(&run(&config).unwrap().rows));
    assert_eq!(csv_a, csv_t1);
    assert_eq!(csv_a, csv_t4);

    // Same contract for sweeps.
    let grid = SweepGrid::parse("sigma=0.1,0.304;rate=0.3,0.6").unwrap();
    let sweep_a = run_results_to_csv(&sweep(&config, &grid).unwrap());
    let sweep_t1 = pool1.install(|| run_results_to_csv(&sweep(&config, &grid).unwrap()));
    let sweep_t4 = pool4.install(|| run_results_to_csv(&sweep(&config, &grid).unwrap()));
    assert_eq!(sweep_a, sweep_t1);
    assert_eq!(sweep_a, sweep_t4);
    println!(
        "acceptance 12 PASS — run and sweep CSVs byte-identical across reruns and across \
         1- and 4-thread pools ({} bytes / {} bytes)",
        csv_a.len(),
        sweep_a.len()
    );
}
