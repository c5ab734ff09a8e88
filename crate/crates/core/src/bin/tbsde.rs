use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teugels_bdsde::commands::{cmd_convergence, cmd_simulate, cmd_solve, cmd_verify};
use teugels_bdsde::config::{Prepared, RunConfig};
use teugels_bdsde::verify::Selection;
use teugels_bdsde::Error;

#[derive(Parser)]
#[command(name = "tbsde", version, about = "Reflected anticipated BDSDE solver driven by Teugels martingales")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write path dumps and regression diagnostics.
    #[arg(long)]
    debug: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths and check the Teugels brackets.
    Simulate(Common),
    /// Solve the configured equation.
    Solve(Common),
    /// Compare the solver against the oracle cases.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated case names; an empty list selects nothing.
        #[arg(long, value_delimiter = ',')]
        cases: Option<Vec<String>>,
        /// Multiplies every case tolerance.
        #[arg(long)]
        tolerance_scale: Option<f64>,
    },
    /// Grid-refinement table for a closed-form case.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step counts (overrides the config).
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
}

fn load(common: &Common) -> Result<Prepared, Error> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.rng.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.directory = out.clone();
    }
    cfg.prepare()
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate(common) => {
            let p = load(&common)?;
            let r = cmd_simulate(&p, &p.config.output.directory, common.debug)?;
            println!(
                "simulated {} paths, order {}; bracket checks failing: {} of {}",
                r.total_paths, r.order, r.bracket_failures, r.bracket_checks
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve(common) => {
            let p = load(&common)?;
            let r = cmd_solve(&p, &p.config.output.directory, common.debug)?;
            print!("{}", r.summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, cases, tolerance_scale } => {
            let cfg = match &common.config {
                Some(path) => Some(RunConfig::load(path)?),
                None => None,
            };
            let from_cfg = cfg.as_ref().map(|c| c.verify.clone()).unwrap_or_default();
            let selection = match cases.or(from_cfg.cases) {
                None => Selection::All,
                Some(names) => Selection::Only(names.into_iter().filter(|n| !n.is_empty()).collect()),
            };
            let scale = tolerance_scale.or(from_cfg.tolerance_scale).unwrap_or(1.0);
            let out = common
                .out
                .clone()
                .or_else(|| cfg.map(|c| c.output.directory))
                .unwrap_or_else(|| PathBuf::from("out"));
            let (report, _) = cmd_verify(&selection, scale, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for c in &report.cases {
                println!(
                    "{} {}: max delta {:.3e}, tolerance {:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.comparison.max_delta,
                    c.tolerance
                );
            }
            let failures = report.failures();
            println!("{} cases, {} failed", report.cases.len(), failures);
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Convergence { common, levels } => {
            let p = load(&common)?;
            let levels = levels.unwrap_or_else(|| p.config.numerics.levels.clone());
            let (table, _) = cmd_convergence(&p, &levels, &p.config.output.directory)?;
            println!("exact Y_0: {}", table.exact);
            for r in &table.rows {
                let ratio = r.ratio.map_or(String::from("-"), |v| format!("{v:.4}"));
                println!("N = {:>6}  |Y_0 - exact| = {:.6e}  ratio {}", r.n, r.abs_error, ratio);
            }
            Ok(match table.monotone {
                Some(false) => {
                    eprintln!("error column is not strictly decreasing");
                    ExitCode::from(3)
                }
                _ => ExitCode::SUCCESS,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Simulate(c) | Command::Solve(c) => c.threads,
        Command::Verify { common, .. } | Command::Convergence { common, .. } => common.threads,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
