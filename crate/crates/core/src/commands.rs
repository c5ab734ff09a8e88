//! The `simulate`, `solve`, `verify` and `convergence` commands.
//!
//! Every command writes its tables into an output directory. Floats are
//! rendered with 17 significant digits and nothing run-specific (timings,
//! thread counts) is written, so reruns with the same seed are byte-identical.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Prepared;
use crate::error::{Error, Result};
use crate::levy::PathBundle;
use crate::problem::{BarrierSpec, GeneratorFamily, ProblemSpec};
use crate::solver::{solve, Diagnostics, SolveMode, SolverState};
use crate::teugels::{simulate_with_basis, teugels_values, TeugelsBasis};
use crate::verify::{run_suite, Selection, SuiteReport};

/// Bracket estimates further than this many standard errors from `δ_ij t` fail.
pub const BRACKET_Z_LIMIT: f64 = 4.0;

fn e(v: f64) -> String {
    format!("{v:.16e}")
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

/// Mean and population variance; constant samples give their value and 0 exactly.
fn mean_var<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let mut it = values.clone();
    let first = *it.next().expect("at least one sample");
    if it.all(|&v| v == first) {
        return (first, 0.0);
    }
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var)
}

/// Simulates the configured driver on `N` main steps.
pub fn simulate_for(prepared: &Prepared, n: usize) -> Result<(PathBundle, TeugelsBasis)> {
    let cfg = &prepared.config;
    let grid = cfg.grid_with(n)?;
    simulate_with_basis(
        &cfg.problem.levy,
        &grid,
        cfg.numerics.n_b_scenarios,
        cfg.numerics.n_paths,
        cfg.rng.seed,
        Some(prepared.order),
    )
}

/// One row of the bracket-orthogonality table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketRow {
    pub node: usize,
    pub time: f64,
    pub i: usize,
    pub j: usize,
    pub estimate: f64,
    pub expected: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

/// Monte-Carlo estimates of `E[H^(i)_t H^(j)_t]` against `δ_ij t` at every main node after 0.
pub fn bracket_table(bundle: &PathBundle) -> Result<Vec<BracketRow>> {
    let p = bundle.teugels_order();
    let grid = &bundle.grid;
    let mut values = Vec::with_capacity(p);
    for i in 1..=p {
        values.push(
            (0..bundle.n_scenarios())
                .map(|s| teugels_values(bundle, s, i))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let n_total = bundle.total_paths() as f64;
    let mut rows = Vec::new();
    for k in 1..=grid.terminal_index() {
        let t = grid.time(k);
        for i in 0..p {
            for j in i..p {
                let products: Vec<f64> = values[i]
                    .iter()
                    .zip(&values[j])
                    .flat_map(|(a, b)| a.row(k).iter().zip(b.row(k)).map(|(x, y)| x * y).collect::<Vec<_>>())
                    .collect();
                let (estimate, var) = mean_var(products.iter());
                let std_error = (var / n_total).sqrt();
                let expected = if i == j { t } else { 0.0 };
                let z = if std_error > 0.0 {
                    (estimate - expected) / std_error
                } else if estimate == expected {
                    0.0
                } else {
                    f64::INFINITY
                };
                rows.push(BracketRow {
                    node: k,
                    time: t,
                    i: i + 1,
                    j: j + 1,
                    estimate,
                    expected,
                    std_error,
                    z,
                    pass: z.abs() <= BRACKET_Z_LIMIT,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub order: usize,
    pub total_paths: usize,
    pub bracket_checks: usize,
    pub bracket_failures: usize,
    pub files: Vec<PathBuf>,
}

/// Writes `paths.csv` (per-node means and variances of `L`, `Y^(i)`, `H^(i)`)
/// and `brackets.csv`; with `debug` also `levy_paths.csv`.
pub fn cmd_simulate(prepared: &Prepared, out: &Path, debug: bool) -> Result<SimulateReport> {
    let (bundle, basis) = simulate_for(prepared, prepared.config.numerics.n)?;
    let p = basis.order();
    let grid = &bundle.grid;
    let mut h = Vec::with_capacity(p);
    for i in 1..=p {
        h.push(
            (0..bundle.n_scenarios())
                .map(|s| teugels_values(&bundle, s, i))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let mut csv = String::from("node,time,L_mean,L_var");
    for prefix in ["Y", "H"] {
        for i in 1..=p {
            csv.push_str(&format!(",{prefix}{i}_mean,{prefix}{i}_var"));
        }
    }
    csv.push('\n');
    for k in 0..grid.n_nodes() {
        let (m, v) = mean_var(bundle.scenarios.iter().flat_map(|s| s.levy.row(k).into_iter()));
        csv.push_str(&format!("{k},{},{},{}", e(grid.time(k)), e(m), e(v)));
        for i in 0..p {
            let (m, v) = mean_var(bundle.scenarios.iter().flat_map(|s| s.ycomp[i].row(k).into_iter()));
            csv.push_str(&format!(",{},{}", e(m), e(v)));
        }
        for hi in &h {
            let (m, v) = mean_var(hi.iter().flat_map(|a| a.row(k).into_iter()));
            csv.push_str(&format!(",{},{}", e(m), e(v)));
        }
        csv.push('\n');
    }
    let rows = bracket_table(&bundle)?;
    let mut brackets = String::from("node,time,i,j,estimate,expected,std_error,z,pass\n");
    for r in &rows {
        brackets.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.node,
            e(r.time),
            r.i,
            r.j,
            e(r.estimate),
            e(r.expected),
            e(r.std_error),
            e(r.z),
            r.pass
        ));
    }
    let mut files = Vec::new();
    write(out, "paths.csv", &csv, &mut files)?;
    write(out, "brackets.csv", &brackets, &mut files)?;
    if debug {
        let mut dump = Vec::new();
        bundle.write_levy_dump(&mut dump)?;
        write(out, "levy_paths.csv", &String::from_utf8_lossy(&dump), &mut files)?;
    }
    Ok(SimulateReport {
        order: p,
        total_paths: bundle.total_paths(),
        bracket_checks: rows.len(),
        bracket_failures: rows.iter().filter(|r| !r.pass).count(),
        files,
    })
}

/// Headline numbers of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub y0: f64,
    pub y0_std_error: f64,
    pub k_t_mean: f64,
    pub skorokhod_residual: f64,
    pub max_k_increment: f64,
    pub mode: String,
    pub diagnostics: Diagnostics,
}

impl fmt::Display for SolveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.diagnostics;
        writeln!(f, "Y_0: {} (std error {})", self.y0, self.y0_std_error)?;
        writeln!(f, "K_T mean: {}", self.k_t_mean)?;
        writeln!(f, "Skorokhod residual: {}", self.skorokhod_residual)?;
        writeln!(f, "largest K increment: {}", self.max_k_increment)?;
        writeln!(
            f,
            "beta: {}, c_hat: {} (infimum {}), contraction guaranteed: {}",
            d.beta, d.contraction.c_hat, d.contraction.c_hat_infimum, d.convergence_guaranteed
        )?;
        if self.mode == "picard" {
            let last = d.distances.last().copied().unwrap_or(f64::NAN);
            writeln!(f, "picard iterations: {}, final distance: {}", d.picard_iterations, last)?;
            let ratios: Vec<String> = d.distance_ratios.iter().map(|r| r.to_string()).collect();
            writeln!(f, "distance ratios: [{}]", ratios.join(", "))?;
        }
        for w in &d.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub summary: SolveSummary,
    pub files: Vec<PathBuf>,
}

fn barrier_mean(barrier: &BarrierSpec, bundle: &PathBundle, k: usize) -> Option<f64> {
    if !barrier.is_active() {
        return None;
    }
    let t = bundle.grid.time(k);
    if !barrier.depends_on_path() {
        return Some(barrier.eval(t, 0.0));
    }
    let vals: Vec<f64> = bundle
        .scenarios
        .iter()
        .flat_map(|s| s.levy.row(k).iter().map(|&l| barrier.eval(t, l)).collect::<Vec<_>>())
        .collect();
    Some(mean_var(vals.iter()).0)
}

/// Solves the configured problem on an already simulated bundle.
pub fn solve_bundle(
    prepared: &Prepared,
    bundle: &PathBundle,
    basis: &TeugelsBasis,
    debug: bool,
) -> Result<(SolverState, SolveSummary)> {
    let mut opts = prepared.options;
    opts.record_r2 = debug;
    let (state, diag) = solve(&prepared.config.problem, bundle, basis, opts)?;
    let n = bundle.grid.terminal_index();
    let summary = SolveSummary {
        y0: state.mean_y(0),
        y0_std_error: diag.y0_std_error,
        k_t_mean: state.mean_k(n),
        skorokhod_residual: diag.skorokhod_residual,
        max_k_increment: diag.max_k_increment,
        mode: match opts.mode {
            SolveMode::Direct => "direct".into(),
            SolveMode::Picard { .. } => "picard".into(),
        },
        diagnostics: diag,
    };
    Ok((state, summary))
}

/// Writes `solution.csv` and `summary.json` (plus `picard.csv` in Picard mode
/// and, with `debug`, `levy_paths.csv` and `r2.csv`).
pub fn cmd_solve(prepared: &Prepared, out: &Path, debug: bool) -> Result<SolveReport> {
    let (bundle, basis) = simulate_for(prepared, prepared.config.numerics.n)?;
    let (state, summary) = solve_bundle(prepared, &bundle, &basis, debug)?;
    let grid = &bundle.grid;
    let p = basis.order();
    let n = grid.terminal_index();
    let mut csv = String::from("node,time,Y_mean");
    for i in 1..=p {
        csv.push_str(&format!(",Z{i}_mean"));
    }
    csv.push_str(",K_mean,barrier\n");
    for k in 0..grid.n_nodes() {
        csv.push_str(&format!("{k},{},{}", e(grid.time(k)), e(state.mean_y(k))));
        for i in 1..=p {
            csv.push_str(&format!(",{}", e(state.mean_z(i, k))));
        }
        let barrier = barrier_mean(&prepared.config.problem.barrier, &bundle, k).map_or(String::new(), e);
        csv.push_str(&format!(",{},{}\n", e(state.mean_k(k.min(n))), barrier));
    }
    let mut files = Vec::new();
    write(out, "solution.csv", &csv, &mut files)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write(out, "summary.json", &(json + "\n"), &mut files)?;
    let d = &summary.diagnostics;
    if summary.mode == "picard" {
        let mut table = String::from("iteration,beta_norm,distance,ratio\n");
        for (it, (norm, dist)) in d.beta_norms.iter().zip(&d.distances).enumerate() {
            let ratio = if it == 0 { String::new() } else { e(d.distance_ratios[it - 1]) };
            table.push_str(&format!("{},{},{},{}\n", it + 1, e(*norm), e(*dist), ratio));
        }
        write(out, "picard.csv", &table, &mut files)?;
    }
    if debug {
        let mut dump = Vec::new();
        bundle.write_levy_dump(&mut dump)?;
        write(out, "levy_paths.csv", &String::from_utf8_lossy(&dump), &mut files)?;
        let mut r2 = String::from("step,time,r_squared\n");
        for (k, v) in d.r2_per_step.iter().enumerate() {
            r2.push_str(&format!("{k},{},{}\n", e(grid.time(k)), e(*v)));
        }
        write(out, "r2.csv", &r2, &mut files)?;
    }
    Ok(SolveReport { summary, files })
}

/// Runs the oracle suite and writes `verify.csv`.
pub fn cmd_verify(selection: &Selection, tolerance_scale: f64, out: &Path) -> Result<(SuiteReport, Vec<PathBuf>)> {
    let report = run_suite(selection, tolerance_scale)?;
    let mut files = Vec::new();
    write(out, "verify.csv", &report.to_csv(), &mut files)?;
    Ok((report, files))
}

/// `Y_0` in closed form, when the configured problem has one.
///
/// Covered: constant `ξ`, no barrier, no anticipation, `g = 0` and `f`
/// constant or affine in `y` alone, where `Y` solves `y' = -(c + a y)` backwards.
pub fn closed_form_y0(problem: &ProblemSpec) -> Option<f64> {
    let xi = problem.xi.constant_value()?;
    if problem.barrier.is_active() || !matches!(problem.g.family, GeneratorFamily::Zero) {
        return None;
    }
    let (c, a) = match &problem.f.family {
        GeneratorFamily::Zero => (0.0, 0.0),
        GeneratorFamily::Constant { value } => (*value, 0.0),
        GeneratorFamily::Affine { constant, y, z } if z.iter().all(|&v| v == 0.0) => (*constant, *y),
        _ => return None,
    };
    let t = problem.horizon;
    Some(if a == 0.0 {
        xi + c * t
    } else {
        (xi + c / a) * (a * t).exp() - c / a
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub y0: f64,
    pub abs_error: f64,
    /// Error at the previous level over the error at this one.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub exact: f64,
    pub rows: Vec<ConvergenceRow>,
    /// `None` when fewer than two levels are given or every error vanishes.
    pub monotone: Option<bool>,
}

/// Errors below this are treated as exact.
const EXACT: f64 = 1e-14;

/// Solves at each level and writes `convergence.csv`.
pub fn cmd_convergence(prepared: &Prepared, levels: &[usize], out: &Path) -> Result<(ConvergenceTable, Vec<PathBuf>)> {
    let exact = closed_form_y0(&prepared.config.problem).ok_or_else(|| {
        Error::Refused(
            "convergence needs a closed-form case: constant xi, no barrier, no anticipation, g = 0, f affine in y".into(),
        )
    })?;
    if levels.is_empty() || levels.contains(&0) {
        return Err(Error::Config("levels must be a nonempty list of positive step counts".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
    for &n in levels {
        let (bundle, basis) = simulate_for(prepared, n)?;
        let (state, _) = solve(&prepared.config.problem, &bundle, &basis, prepared.options)?;
        let y0 = state.mean_y(0);
        let abs_error = (y0 - exact).abs();
        let ratio = rows.last().map(|r| if abs_error > 0.0 { r.abs_error / abs_error } else { f64::INFINITY });
        rows.push(ConvergenceRow { n, y0, abs_error, ratio });
    }
    let monotone = if rows.len() < 2 || rows.iter().all(|r| r.abs_error <= EXACT) {
        None
    } else {
        Some(rows.windows(2).all(|w| w[1].abs_error < w[0].abs_error))
    };
    let mut csv = String::from("N,Y0,exact,abs_error,ratio\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            e(r.y0),
            e(exact),
            e(r.abs_error),
            r.ratio.map_or(String::new(), e)
        ));
    }
    let mut files = Vec::new();
    write(out, "convergence.csv", &csv, &mut files)?;
    Ok((ConvergenceTable { exact, rows, monotone }, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn prepared(body: &str) -> Prepared {
        RunConfig::from_toml(body).unwrap().prepare().unwrap()
    }

    const ONE_ATOM: &str = r#"
[problem]
T = 1.0
levy = { atoms = [{ size = 1.0, intensity = 1.0 }] }
f = { family = { kind = "zero" } }
xi = { kind = "constant", value = 2.0 }
eta = { kind = "constant", value = 2.0 }
[numerics]
N = 10
n_paths = 20000
[rng]
seed = 5
"#;

    #[test]
    fn poisson_variance_matches_node_times() {
        let dir = tempfile::tempdir().unwrap();
        let report = cmd_simulate(&prepared(ONE_ATOM), dir.path(), false).unwrap();
        assert_eq!(report.order, 1);
        let csv = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            let (t, h_var) = (cols[1], cols[7]);
            assert!((h_var - t).abs() < 0.05, "t {t} var {h_var}");
        }
    }

    #[test]
    fn zero_intensity_levy_is_pure_drift() {
        let dir = tempfile::tempdir().unwrap();
        let body = ONE_ATOM.replace("levy = { atoms = [{ size = 1.0, intensity = 1.0 }] }", "levy = { drift = 0.3, atoms = [{ size = 1.0, intensity = 0.0 }] }");
        let report = cmd_simulate(&prepared(&body), dir.path(), false).unwrap();
        assert_eq!(report.order, 0);
        let csv = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols[2], 0.3 * cols[1]);
            assert_eq!(cols[3], 0.0);
        }
    }

    #[test]
    fn constant_problem_gives_flat_solution() {
        let dir = tempfile::tempdir().unwrap();
        let report = cmd_solve(&prepared(&ONE_ATOM.replace("20000", "500")), dir.path(), false).unwrap();
        assert_eq!(report.summary.y0, 2.0);
        let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[2].parse::<f64>().unwrap(), 2.0);
            assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0);
        }
    }

    #[test]
    fn picard_summary_on_constant_generators() {
        let dir = tempfile::tempdir().unwrap();
        let body = ONE_ATOM
            .replace("f = { family = { kind = \"zero\" } }", "f = { family = { kind = \"constant\", value = 1.0 } }")
            .replace("n_paths = 20000", "n_paths = 200\nmode = \"picard\"");
        let report = cmd_solve(&prepared(&body), dir.path(), false).unwrap();
        assert!(report.summary.to_string().contains("iterations: 2, final distance: 0\n"));
    }

    #[test]
    fn convergence_cases() {
        let dir = tempfile::tempdir().unwrap();
        let exact_case = prepared(&ONE_ATOM.replace("20000", "50"));
        let (table, _) = cmd_convergence(&exact_case, &[10, 20], dir.path()).unwrap();
        assert!(table.rows.iter().all(|r| r.abs_error == 0.0));
        assert_eq!(table.monotone, None);
        let (table, _) = cmd_convergence(&exact_case, &[10], dir.path()).unwrap();
        assert_eq!(table.rows.len(), 1);
        let barrier = ONE_ATOM.replace("[numerics]", "barrier = { kind = \"constant\", value = 1.0 }\n[numerics]");
        let err = cmd_convergence(&prepared(&barrier), &[10], dir.path()).unwrap_err();
        assert!(matches!(err, Error::Refused(_)));
    }
}
