//! Acceptance criteria, one pass/fail line each.
//!
//! Reference values are computed here, not taken from the engine: Gram
//! matrices from the atoms, brackets from raw increments, closed forms and
//! hand-written recursions.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teugels_bdsde::commands::cmd_solve;
use teugels_bdsde::config::RunConfig;
use teugels_bdsde::levy::{LevySpec, TimeGrid};
use teugels_bdsde::oracles::{deterministic_delay_recursion, LinearDriver};
use teugels_bdsde::problem::{
    BarrierSpec, DelaySpec, ExtensionSpec, GeneratorFamily, GeneratorSpec, ProblemSpec, TerminalSpec,
};
use teugels_bdsde::solver::{
    beta_distance, ito_residual, picard_phi, representation_residual, solve, Integrand, SolveMode,
    SolveOptions, SolverState,
};
use teugels_bdsde::{build_basis, simulate_with_basis, RegressionBasis};

// Tolerances and limits.
const ORTHONORMAL_TOL: f64 = 1e-10;
const BRACKET_SE: f64 = 4.0;
const REPRESENTATION_RMS: f64 = 0.02;
const Z_RELATIVE: f64 = 0.02;
const ODE_TOL: f64 = 0.03;
const DELAY_TOL: f64 = 1e-10;
const NOISE_MULTIPLE: f64 = 2.0;
const PICARD_MAX_ITERS: usize = 10;
const ITO_FACTOR: f64 = 5.0;
const ITO_EXACT: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = body();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    report(format!(
        "criterion {id} ({name}): {} | {} | {:.2} s of {} s{}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { " (over time)" }
    ));
    pass
}

// Written past the test harness capture so the lines land in plain `cargo test` output.
fn report(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn orthonormality() -> Outcome {
    let measures: Vec<Vec<(f64, f64)>> = vec![
        vec![(1.0, 1.0), (-1.0, 1.0)],
        vec![(1.0, 1.0)],
        vec![(1.0, 4.0)],
        vec![(0.3, 7.5)],
        vec![(-2.0, 0.1)],
    ];
    let mut worst: f64 = 0.0;
    for atoms in measures {
        let spec = LevySpec::pure_jump(0.0, &atoms).unwrap();
        let p = atoms.len();
        let basis = build_basis(&spec, p).unwrap();
        // G from the atoms: ∫ x^{i+j} x² ν(dx).
        let gram = |i: usize, j: usize| -> f64 { atoms.iter().map(|(a, l)| l * a.powi((i + j + 2) as i32)).sum() };
        for r in 0..p {
            for s in 0..p {
                let mut v = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        v += basis.coeffs()[(r, a)] * gram(a, b) * basis.coeffs()[(s, b)];
                    }
                }
                let target = if r == s { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
    }
    Outcome {
        pass: worst < ORTHONORMAL_TOL,
        detail: format!("max |CGC^T - I| = {worst:.2e}"),
    }
}

fn bracket_orthogonality() -> Outcome {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0), (-1.0, 1.0)]).unwrap();
    let grid = TimeGrid::main_only(1.0, 10).unwrap();
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 100_000, 31, Some(2)).unwrap();
    assert_eq!(basis.order(), 2);
    let s = &bundle.scenarios[0];
    let n = s.n_paths();
    let mut h = [vec![0.0; n], vec![0.0; n]];
    let mut worst_z: f64 = 0.0;
    for k in 0..10 {
        for (i, hi) in h.iter_mut().enumerate() {
            for (j, v) in hi.iter_mut().enumerate() {
                *v += s.dh[i][[k, j]];
            }
        }
        let t = grid.time(k + 1);
        for (a, b) in [(0, 0), (0, 1), (1, 1)] {
            let prod: Vec<f64> = (0..n).map(|j| h[a][j] * h[b][j]).collect();
            let mean = prod.iter().sum::<f64>() / n as f64;
            let var = prod.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = if a == b { t } else { 0.0 };
            worst_z = worst_z.max((mean - expected).abs() / (var / n as f64).sqrt());
        }
    }
    Outcome {
        pass: worst_z < BRACKET_SE,
        detail: format!("30 node/pair checks, worst |estimate - delta t| = {worst_z:.2} SE"),
    }
}

fn representation() -> Outcome {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0)]).unwrap();
    let grid = TimeGrid::main_only(1.0, 10).unwrap();
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 10_000, 17, None).unwrap();
    let xi = TerminalSpec::LinearCompensated { intercept: 0.0, slope: 1.0 };
    let regression = RegressionBasis::polynomial(2);
    let rms = representation_residual(xi, &bundle, &basis, regression).unwrap();

    // Second route: rebuild ξ from a direct solve and the raw compensated path.
    let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
    problem.xi = xi;
    problem.eta = ExtensionSpec::Terminal;
    let opts = SolveOptions { reflect: false, regression, ..SolveOptions::default() };
    let (state, _) = solve(&problem, &bundle, &basis, opts).unwrap();
    let (s, sol) = (&bundle.scenarios[0], &state.scenarios[0]);
    let mut sq = 0.0;
    let mut z_sum = 0.0;
    for j in 0..s.n_paths() {
        let mut rebuilt = sol.y[[0, j]];
        for k in 0..10 {
            rebuilt += sol.z[0][[k, j]] * s.dh[0][[k, j]];
            z_sum += sol.z[0][[k, j]];
        }
        let target = s.levy[[10, j]] - 1.0;
        sq += (rebuilt - target).powi(2);
    }
    let rms2 = (sq / s.n_paths() as f64).sqrt();
    let z = z_sum / (10 * s.n_paths()) as f64;
    let pass = rms < REPRESENTATION_RMS && (rms - rms2).abs() < 1e-12 && (z - 1.0).abs() < Z_RELATIVE;
    Outcome {
        pass,
        detail: format!("RMS residual {rms:.4} (rebuilt {rms2:.4}), mean Z1 = {z:.4}"),
    }
}

fn ode() -> Outcome {
    let mut errs = Vec::new();
    for n in [50, 100, 200] {
        let spec = LevySpec::pure_jump(0.0, &[]).unwrap();
        let grid = TimeGrid::main_only(1.0, n).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 4, 0, None).unwrap();
        let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 1.0);
        problem.f = GeneratorSpec::new(GeneratorFamily::Affine { constant: 0.0, y: 1.0, z: vec![] }, 1.0);
        let (state, _) = solve(&problem, &bundle, &basis, SolveOptions::default()).unwrap();
        errs.push((state.mean_y(0) - std::f64::consts::E).abs());
    }
    Outcome {
        pass: errs[2] < ODE_TOL && errs[0] > errs[1] && errs[1] > errs[2],
        detail: format!("|Y_0 - e| at N = 50/100/200: {:.5} / {:.5} / {:.5}", errs[0], errs[1], errs[2]),
    }
}

fn delay() -> Outcome {
    let (n, delta) = (100, 0.25);
    let spec = LevySpec::pure_jump(0.0, &[]).unwrap();
    let grid = TimeGrid::new(1.0, delta, n, 25).unwrap();
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 4, 0, None).unwrap();
    let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 1.0);
    problem.extension = delta;
    problem.phi = Some(DelaySpec::Constant { delta });
    problem.f = GeneratorSpec::new(
        GeneratorFamily::AnticipatedAffine { constant: 0.0, y: 0.0, z: vec![], y_future: 1.0, z_future: vec![] },
        1.0,
    );
    let (state, _) = solve(&problem, &bundle, &basis, SolveOptions::default()).unwrap();
    let driver = LinearDriver { y_future: 1.0, ..LinearDriver::default() };
    let oracle = deterministic_delay_recursion(driver, 1.0, |_| 1.0, delta, 1.0, n);
    let sol = &state.scenarios[0];
    let worst = oracle
        .iter()
        .enumerate()
        .map(|(k, r)| sol.y.row(k).iter().map(|v| (v - r).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    Outcome {
        pass: worst < DELAY_TOL && oracle.len() == grid.n_nodes(),
        detail: format!("max node deviation {worst:.2e} over {} nodes, Y_0 = {:.6}", oracle.len(), oracle[0]),
    }
}

const DETERMINISTIC_BARRIER: &str = r#"
[problem]
T = 1.0
levy = { atoms = [] }
f = { family = { kind = "zero" } }
xi = { kind = "constant", value = 1.0 }
eta = { kind = "constant", value = 1.0 }
barrier = { kind = "constant", value = 2.0 }
[numerics]
N = 20
n_paths = 4
"#;

const STOCHASTIC: &str = r#"
[problem]
T = 1.0
levy = { drift = 0.1, atoms = [{ size = 1.0, intensity = 1.5 }, { size = -0.5, intensity = 1.0 }] }
f = { family = { kind = "affine", constant = 0.2, y = 0.3, z = [0.1, 0.1] }, lipschitz_c = 0.11 }
g = { family = { kind = "affine", y = 0.1, z = [0.2] }, lipschitz_c = 0.1, alpha1 = 0.1 }
xi = { kind = "linear_levy", intercept = 0.0, slope = 1.0 }
eta = { kind = "terminal" }
barrier = { kind = "affine_levy", intercept = -0.3, slope = 0.5 }
[numerics]
N = 20
n_paths = 2000
n_b_scenarios = 2
[rng]
seed = 99
"#;

fn solve_text(body: &str, dir: &Path) -> (String, teugels_bdsde::commands::SolveSummary) {
    let prepared = RunConfig::from_toml(body).unwrap().prepare().unwrap();
    let report = cmd_solve(&prepared, dir, false).unwrap();
    (std::fs::read_to_string(dir.join("solution.csv")).unwrap(), report.summary)
}

fn reflection() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (_, det) = solve_text(DETERMINISTIC_BARRIER, &tmp.path().join("a"));
    let part_a = det.y0 == 2.0 && det.k_t_mean == 1.0;

    let picard = STOCHASTIC.replace("n_b_scenarios = 2", "n_b_scenarios = 2\nmode = \"picard\"");
    let mut zero_lines = 0;
    let runs = [DETERMINISTIC_BARRIER, STOCHASTIC, picard.as_str()];
    for (idx, body) in runs.iter().enumerate() {
        let (_, summary) = solve_text(body, &tmp.path().join(format!("b{idx}")));
        if summary.to_string().lines().any(|l| l == "Skorokhod residual: 0") {
            zero_lines += 1;
        }
    }
    let part_b = zero_lines == runs.len();

    let far = STOCHASTIC.replace("{ kind = \"affine_levy\", intercept = -0.3, slope = 0.5 }", "{ kind = \"constant\", value = -1e6 }");
    let free = far.replace("n_b_scenarios = 2", "n_b_scenarios = 2\nreflect = false");
    let (far_csv, far_sum) = solve_text(&far, &tmp.path().join("c1"));
    let (free_csv, _) = solve_text(&free, &tmp.path().join("c2"));
    let strip_barrier = |csv: &str| -> Vec<String> {
        csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    let part_c = strip_barrier(&far_csv) == strip_barrier(&free_csv) && far_sum.k_t_mean == 0.0;
    Outcome {
        pass: part_a && part_b && part_c,
        detail: format!(
            "(a) Y_0 = {}, K_T = {}; (b) zero residual on {zero_lines}/{} runs; (c) far barrier identical: {part_c}",
            det.y0,
            det.k_t_mean,
            runs.len()
        ),
    }
}

fn random_input(state: &SolverState, bundle: &teugels_bdsde::PathBundle, rng: &mut ChaCha8Rng) -> SolverState {
    let mut out = state.clone();
    let n = bundle.grid.terminal_index();
    for (sol, s) in out.scenarios.iter_mut().zip(&bundle.scenarios) {
        let coef: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in 0..n {
            let t = bundle.grid.time(k);
            for j in 0..s.n_paths() {
                let l = s.levy[[k, j]];
                sol.y[[k, j]] = coef[0] + coef[1] * l + coef[2] * t + 0.3 * rng.random_range(-1.0..1.0);
                for z in sol.z.iter_mut() {
                    z[[k, j]] = coef[3] + coef[4] * l + coef[5] * t;
                }
            }
        }
    }
    out
}

fn picard() -> Outcome {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0)]).unwrap();
    let grid = TimeGrid::new(1.0, 0.25, 20, 5).unwrap();
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 2, 2000, 4242, None).unwrap();
    let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
    problem.extension = 0.25;
    problem.xi = TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 };
    problem.eta = ExtensionSpec::Terminal;
    problem.phi = Some(DelaySpec::Constant { delta: 0.25 });
    problem.psi = Some(DelaySpec::Constant { delta: 0.25 });
    problem.f = GeneratorSpec::new(
        GeneratorFamily::AnticipatedAffine { constant: 0.1, y: 0.15, z: vec![0.1], y_future: 0.15, z_future: vec![] },
        0.1,
    );
    problem.g = GeneratorSpec::new(
        GeneratorFamily::AnticipatedAffine { constant: 0.0, y: 0.1, z: vec![0.2], y_future: 0.0, z_future: vec![0.1] },
        0.1,
    )
    .with_alphas(0.1, 0.1);
    problem.barrier = BarrierSpec::None;
    let opts = SolveOptions { reflect: false, ..SolveOptions::default() };

    let (direct, diag) = solve(&problem, &bundle, &basis, opts).unwrap();
    let beta = diag.beta;
    let feasible = diag.convergence_guaranteed;

    let base = SolverState::extension_padded_zero(&problem, &bundle, &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..20 {
        let u1 = random_input(&base, &bundle, &mut rng);
        let u2 = random_input(&base, &bundle, &mut rng);
        let (p1, _) = picard_phi(&problem, &bundle, &basis, &u1, opts).unwrap();
        let (p2, _) = picard_phi(&problem, &bundle, &basis, &u2, opts).unwrap();
        let ratio = beta_distance(&p1, &p2, &grid, beta).unwrap() / beta_distance(&u1, &u2, &grid, beta).unwrap();
        worst_ratio = worst_ratio.max(ratio);
    }

    let picard_opts = SolveOptions {
        mode: SolveMode::Picard { tol: 1e-10, max_iters: PICARD_MAX_ITERS },
        ..opts
    };
    let (fixed, pdiag) = solve(&problem, &bundle, &basis, picard_opts).unwrap();
    // Monte-Carlo standard error of the direct solution, in the same β-weighting.
    let n_total = direct.n_paths_total() as f64;
    let mut floor_sq = 0.0;
    for k in 0..grid.n_steps() {
        let vals: Vec<f64> = direct.scenarios.iter().flat_map(|s| s.y.row(k).to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / n_total;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_total;
        floor_sq += (beta * grid.time(k)).exp() * grid.dt(k) * var / n_total;
    }
    let floor = floor_sq.sqrt();
    let gap = beta_distance(&fixed, &direct, &grid, beta).unwrap();
    let monotone = pdiag.distances.windows(2).skip(1).all(|w| w[1] <= w[0]);
    let pass = feasible
        && worst_ratio < 1.0
        && pdiag.picard_iterations <= PICARD_MAX_ITERS
        && *pdiag.distances.last().unwrap() < 1e-10
        && gap <= NOISE_MULTIPLE * floor
        && monotone;
    Outcome {
        pass,
        detail: format!(
            "c_hat = {:.3}, worst ratio over 20 pairs {worst_ratio:.3}, {} iterations, |picard - direct| = {gap:.2e} vs floor {floor:.2e}",
            diag.contraction.c_hat, pdiag.picard_iterations
        ),
    }
}

fn ito() -> Outcome {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 2.0)]).unwrap();
    let beta = Integrand::Affine { intercept: 1.0, slope: 2.0 };
    let mut mean = Vec::new();
    let mut worst_jump: f64 = 0.0;
    for n in [100, 400] {
        let grid = TimeGrid::main_only(1.0, n).unwrap();
        let (bundle, _) = simulate_with_basis(&spec, &grid, 2, 200, 5, None).unwrap();
        let r = ito_residual(1.0, beta, Integrand::Zero, &[], &bundle).unwrap();
        mean.push(r.iter().sum::<f64>() / r.len() as f64);
        let jumps = ito_residual(0.0, Integrand::Zero, Integrand::Zero, &[Integrand::Constant { value: 1.0 }], &bundle).unwrap();
        // Pathwise bookkeeping: |Σ ΔH|² = Σ ΔH² + 2 Σ H_{k} ΔH_k.
        for (s_idx, s) in bundle.scenarios.iter().enumerate() {
            for j in 0..s.n_paths() {
                let (mut h, mut rhs) = (0.0, 0.0);
                for k in 0..n {
                    let d = s.dh[0][[k, j]];
                    rhs += 2.0 * h * d + d * d;
                    h += d;
                }
                let own = (h * h - rhs).abs();
                worst_jump = worst_jump.max(own).max(jumps[s_idx * s.n_paths() + j]);
            }
        }
    }
    let pass = mean[1] < ITO_FACTOR * mean[0] / 4.0 && mean[1] > 0.0 && worst_jump < ITO_EXACT;
    Outcome {
        pass,
        detail: format!(
            "deterministic residual N = 100: {:.3e}, N = 400: {:.3e} (ratio {:.2}); pure-jump max {worst_jump:.1e}",
            mean[0],
            mean[1],
            mean[0] / mean[1]
        ),
    }
}

fn run_cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_tbsde"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    let body = STOCHASTIC.replace("n_paths = 2000", "n_paths = 500");
    std::fs::write(&cfg, body).unwrap();
    let ode = tmp.path().join("ode.toml");
    std::fs::write(
        &ode,
        "[problem]\nT = 1.0\nlevy = { atoms = [{ size = 1.0, intensity = 1.0 }] }\n\
         f = { family = { kind = \"affine\", y = 1.0 }, lipschitz_c = 1.0 }\n\
         xi = { kind = \"constant\", value = 1.0 }\neta = { kind = \"constant\", value = 1.0 }\n\
         [numerics]\nN = 50\nn_paths = 100\n",
    )
    .unwrap();
    let commands: [(&str, &Path); 4] = [("simulate", &cfg), ("solve", &cfg), ("verify", &cfg), ("convergence", &ode)];
    let mut identical = 0;
    let mut total = 0;
    for (cmd, config) in commands {
        let mut outputs = Vec::new();
        for (rep, threads) in [(0, "1"), (1, "1"), (2, "8"), (3, "8")] {
            let out = tmp.path().join(format!("{cmd}-{rep}"));
            let code = run_cli(&[
                cmd,
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
                "--seed",
                "12345",
            ]);
            assert_eq!(code, 0, "{cmd} exited with {code}");
            outputs.push(files_in(&out));
        }
        total += 1;
        if outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty() {
            identical += 1;
        }
    }
    Outcome {
        pass: identical == total,
        detail: format!("{identical}/{total} commands byte-identical across 2 runs each at 1 and 8 threads"),
    }
}

#[test]
fn acceptance() {
    let results = [
        check(1, "orthonormality", secs(1), orthonormality),
        check(2, "bracket orthogonality", secs(30), bracket_orthogonality),
        check(3, "representation residual", secs(30), representation),
        check(4, "ODE oracle", secs(10), ode),
        check(5, "anticipated delay oracle", secs(5), delay),
        check(6, "reflection", secs(10), reflection),
        check(7, "Picard contraction", secs(120), picard),
        check(8, "Ito residual", secs(10), ito),
        check(9, "determinism", secs(120), determinism),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    report(format!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
