//! `quadpure` — simulate two-copy purification of phase-diffused squeezed
//! states, sweep its parameters, tabulate Wigner functions, and calibrate
//! state parameters.
//!
//! CSV goes to `--out` (falling back to the config's `output`, then stdout);
//! human-readable progress goes to stderr. Failures print one JSON object
//! (`{"error": ..., "kind": ...}`) to stderr and exit 1; usage errors exit 2.
//! `--threads` resizes the worker pool without changing any output byte.

use clap::{Parser, Subcommand};
use quadpure::harness::{
    run, run_results_to_csv, sweep, wigner_grid_to_csv, ExperimentConfig, RunResult, SweepGrid,
};
use quadpure::wigner::{grid_checks, wigner_diffused_grid, GridGeometry};
use quadpure::{calibrate_vp, Error, SqueezedStateSpec};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "quadpure",
    version,
    about = "Phase-space Monte Carlo purification of phase-diffused squeezed light"
)]
struct Cli {
    /// Worker threads (0 = one per core). Output bytes never depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment; one CSV row per purification round.
    Simulate {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination (default: config `output`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config once per grid point; one CSV row per point and round.
    Sweep {
        /// JSON experiment config providing every non-swept setting.
        #[arg(long)]
        config: PathBuf,
        /// Grid such as "sigma=0:0.05:0.5;rate=0.1,0.5" (axes: sigma, rate, x).
        #[arg(long)]
        grid: String,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination (default: config `output`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the phase-diffused Wigner function on a centered grid.
    Wigner {
        /// Squeezed quadrature variance (shot-noise units).
        #[arg(long)]
        vx: f64,
        /// Anti-squeezed quadrature variance (shot-noise units).
        #[arg(long)]
        vp: f64,
        /// Phase-noise width in radians.
        #[arg(long)]
        sigma: f64,
        /// Grid as "nx,np,extent": node counts and centered half-width.
        #[arg(long)]
        grid: String,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the anti-squeezed variance reaching a diffused product.
    Calibrate {
        /// Squeezed quadrature variance (shot-noise units).
        #[arg(long)]
        vx: f64,
        /// Phase-noise width in radians.
        #[arg(long)]
        sigma: f64,
        /// Target diffused variance product Var(x')*Var(p').
        #[arg(long)]
        product: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let json = serde_json::json!({
                "error": err.to_string(),
                "kind": err.kind(),
            });
            eprintln!("{json}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, seed, out } => simulate(config, seed, out),
        Command::Sweep {
            config,
            grid,
            seed,
            out,
        } => run_sweep(config, &grid, seed, out),
        Command::Wigner {
            vx,
            vp,
            sigma,
            grid,
            out,
        } => wigner(vx, vp, sigma, &grid, out),
        Command::Calibrate { vx, sigma, product } => {
            let vp = calibrate_vp(vx, sigma, product)?;
            println!("{vp}");
            eprintln!(
                "calibrated: vx={vx}, sigma={sigma} rad -> vp={vp:.6} (diffused product {product})"
            );
            Ok(())
        }
    }
}

fn load_config(path: PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit_csv(csv: &str, out: Option<PathBuf>, config_out: Option<&PathBuf>) -> Result<(), Error> {
    match out.as_ref().or(config_out) {
        Some(path) => {
            std::fs::write(path, csv)?;
            eprintln!("wrote {} bytes to {}", csv.len(), path.display());
        }
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    Ok(())
}

fn summarize_rows(rows: &[RunResult]) {
    for row in rows {
        match (&row.error, row.var_x_in, row.var_x_out) {
            (Some(err), _, _) => {
                eprintln!("round {} (sigma={:.4}): ERROR {err}", row.round, row.sigma)
            }
            (None, Some(vin), Some(vout)) => {
                let rate = row
                    .survival_rate
                    .map(|r| format!("{r:.4}"))
                    .unwrap_or_else(|| "-".into());
                eprintln!(
                    "round {} (sigma={:.4}): Var(x) {vin:.4} -> {vout:.4}, rate {rate}, n={}",
                    row.round, row.sigma, row.n
                );
            }
            _ => {}
        }
    }
}

fn simulate(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Error> {
    let config = load_config(config, seed)?;
    let output = run(&config)?;
    summarize_rows(&output.rows);
    emit_csv(
        &run_results_to_csv(&output.rows),
        out,
        config.output.as_ref(),
    )
}

fn run_sweep(
    config: PathBuf,
    grid: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), Error> {
    let config = load_config(config, seed)?;
    let grid = SweepGrid::parse(grid)?;
    let rows = sweep(&config, &grid)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "swept {} rows ({} errors); axes: {}",
        rows.len(),
        failed,
        grid.axes
            .iter()
            .map(|a| format!("{}[{}]", a.param.name(), a.values.len()))
            .collect::<Vec<_>>()
            .join(" x ")
    );
    emit_csv(&run_results_to_csv(&rows), out, config.output.as_ref())
}

fn parse_grid_arg(text: &str) -> Result<(usize, usize, f64), Error> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let fail = || Error::Config(format!("--grid `{text}` must be nx,np,extent"));
    if parts.len() != 3 {
        return Err(fail());
    }
    let nx = parts[0].parse().map_err(|_| fail())?;
    let np = parts[1].parse().map_err(|_| fail())?;
    let extent = parts[2].parse().map_err(|_| fail())?;
    Ok((nx, np, extent))
}

fn wigner(vx: f64, vp: f64, sigma: f64, grid_arg: &str, out: Option<PathBuf>) -> Result<(), Error> {
    let (nx, np, extent) = parse_grid_arg(grid_arg)?;
    let spec = SqueezedStateSpec::new(vx, vp)?;
    let geom = GridGeometry::centered(extent, extent, nx, np)?;
    let grid = wigner_diffused_grid(&spec, sigma, &geom)?;
    let checks = grid_checks(&grid)?;
    eprintln!(
        "wigner grid {nx}x{np} over [-{extent}, {extent}]^2: mass {:.8}, Var(x) {:.5}, Var(p) {:.5}",
        checks.mass, checks.var_x, checks.var_p
    );
    emit_csv(&wigner_grid_to_csv(&grid), out, None)
}
