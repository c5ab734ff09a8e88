//! Solver-against-oracle cases behind the `verify` command.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy::{LevySpec, PathBundle, TimeGrid};
use crate::lsmc::RegressionBasis;
use crate::oracles::{closed_form_martingale, deterministic_delay_recursion, reflected_dp, LinearDriver};
use crate::problem::{BarrierSpec, DelaySpec, ExtensionSpec, GeneratorFamily, GeneratorSpec, ProblemSpec, TerminalSpec};
use crate::solver::{solve, SolveOptions, SolverState};
use crate::teugels::{simulate_with_basis, TeugelsBasis};

/// One solver-versus-reference comparison.
#[derive(Debug, Clone, Copy)]
pub struct OracleCase {
    pub name: &'static str,
    pub description: &'static str,
    pub tolerance: f64,
    run: fn() -> Result<Comparison>,
}

/// Reference and engine values of one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub reference_y0: f64,
    pub engine_y0: f64,
    pub reference_k_t: Option<f64>,
    pub engine_k_t: Option<f64>,
    pub reference_z1: Option<f64>,
    pub engine_z1: Option<f64>,
    /// Largest deviation over every compared quantity and node.
    pub max_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub warnings: Vec<String>,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| !c.passed).count()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let mut out = String::from(
            "case,reference_y0,engine_y0,reference_k_t,engine_k_t,reference_z1,engine_z1,max_delta,tolerance,pass\n",
        );
        for c in &self.cases {
            let m = &c.comparison;
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{},{},{},{},{:.16e},{:.16e},{}\n",
                c.name,
                m.reference_y0,
                m.engine_y0,
                opt(m.reference_k_t),
                opt(m.engine_k_t),
                opt(m.reference_z1),
                opt(m.engine_z1),
                m.max_delta,
                c.tolerance,
                c.passed
            ));
        }
        out
    }
}

/// Which cases to run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    All,
    Only(Vec<String>),
}

const HORIZON: f64 = 1.0;

fn no_jumps(n: usize, extension: f64, n_ext: usize) -> Result<(PathBundle, TeugelsBasis)> {
    let spec = LevySpec::pure_jump(0.0, &[])?;
    let grid = TimeGrid::new(HORIZON, extension, n, n_ext)?;
    simulate_with_basis(&spec, &grid, 1, 4, 0, None)
}

fn explicit() -> SolveOptions {
    SolveOptions {
        inner_sweeps: 1,
        ..SolveOptions::default()
    }
}

fn node_delta(state: &SolverState, reference: &[f64]) -> f64 {
    let y = &state.scenarios[0].y;
    reference
        .iter()
        .enumerate()
        .map(|(k, r)| y.row(k).iter().map(|v| (v - r).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

fn deterministic_case(driver: LinearDriver, xi: f64, delta: f64, n: usize) -> Result<Comparison> {
    let dt = HORIZON / n as f64;
    let n_ext = if driver.y_future == 0.0 { 0 } else { (delta / dt).round() as usize };
    let extension = n_ext as f64 * dt;
    let (bundle, basis) = no_jumps(n, extension, n_ext)?;
    let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), HORIZON, xi);
    problem.extension = extension;
    let c = driver.y.abs().powi(2) + driver.y_future.abs().powi(2);
    problem.f = GeneratorSpec::new(
        GeneratorFamily::AnticipatedAffine {
            constant: driver.constant,
            y: driver.y,
            z: Vec::new(),
            y_future: driver.y_future,
            z_future: Vec::new(),
        },
        c,
    );
    if driver.y_future != 0.0 {
        problem.phi = Some(DelaySpec::Constant { delta });
    }
    let (state, _) = solve(&problem, &bundle, &basis, explicit())?;
    let reference = deterministic_delay_recursion(driver, xi, |_| xi, delta, HORIZON, n);
    Ok(Comparison {
        reference_y0: reference[0],
        engine_y0: state.mean_y(0),
        reference_k_t: None,
        engine_k_t: None,
        reference_z1: None,
        engine_z1: None,
        max_delta: node_delta(&state, &reference),
    })
}

fn reflected_case(driver: LinearDriver, xi: f64, barrier: f64, n: usize) -> Result<Comparison> {
    let (bundle, basis) = no_jumps(n, 0.0, 0)?;
    let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), HORIZON, xi);
    problem.f = GeneratorSpec::new(
        GeneratorFamily::Affine {
            constant: driver.constant,
            y: driver.y,
            z: Vec::new(),
        },
        driver.y * driver.y,
    );
    problem.barrier = BarrierSpec::Constant { value: barrier };
    let (state, diag) = solve(&problem, &bundle, &basis, explicit())?;
    if diag.skorokhod_residual != 0.0 {
        return Err(Error::Refused(format!(
            "Skorokhod residual {} is not zero",
            diag.skorokhod_residual
        )));
    }
    let (y, k) = reflected_dp(driver, xi, |_| barrier, HORIZON, n);
    let sol = &state.scenarios[0];
    let k_delta = k
        .iter()
        .enumerate()
        .map(|(m, r)| sol.k.row(m).iter().map(|v| (v - r).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    Ok(Comparison {
        reference_y0: y[0],
        engine_y0: state.mean_y(0),
        reference_k_t: Some(k[n]),
        engine_k_t: Some(state.mean_k(n)),
        reference_z1: None,
        engine_z1: None,
        max_delta: node_delta(&state, &y).max(k_delta),
    })
}

fn martingale_case(intensity: f64, slope: f64) -> Result<Comparison> {
    let n = 10;
    let spec = LevySpec::pure_jump(0.0, &[(1.0, intensity)])?;
    let grid = TimeGrid::main_only(HORIZON, n)?;
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 4000, 2024, None)?;
    let mut problem = ProblemSpec::constant_terminal(spec, HORIZON, 0.0);
    problem.xi = TerminalSpec::LinearCompensated { intercept: 0.0, slope };
    problem.eta = ExtensionSpec::Terminal;
    let opts = SolveOptions {
        reflect: false,
        regression: RegressionBasis::polynomial(2),
        ..SolveOptions::default()
    };
    let (state, _) = solve(&problem, &bundle, &basis, opts)?;
    let s = &bundle.scenarios[0];
    let sol = &state.scenarios[0];
    let mut sq = 0.0;
    let mut z_ref = 0.0;
    for j in 0..s.n_paths() {
        let levy: Vec<f64> = s.levy.column(j).to_vec();
        let (y, z) = closed_form_martingale(0.0, 1.0, intensity, &levy, grid.times());
        z_ref = z * slope;
        for k in 0..=n {
            sq += (sol.y[[k, j]] - slope * y[k]).powi(2);
        }
    }
    let rms = (sq / (s.n_paths() * (n + 1)) as f64).sqrt();
    let z_mean = (0..n).map(|k| state.mean_z(1, k)).sum::<f64>() / n as f64;
    Ok(Comparison {
        reference_y0: 0.0,
        engine_y0: state.mean_y(0),
        reference_k_t: None,
        engine_k_t: None,
        reference_z1: Some(z_ref),
        engine_z1: Some(z_mean),
        max_delta: rms.max((z_mean - z_ref).abs()),
    })
}

/// Every built-in case.
pub fn suite() -> Vec<OracleCase> {
    vec![
        OracleCase {
            name: "constant_terminal",
            description: "f = 0, xi = 3: Y stays at 3",
            tolerance: 1e-12,
            run: || deterministic_case(LinearDriver::default(), 3.0, 0.0, 20),
        },
        OracleCase {
            name: "linear_ode",
            description: "f = y, xi = 1: discrete product (1 + dt)^N",
            tolerance: 1e-10,
            run: || deterministic_case(LinearDriver { y: 1.0, ..LinearDriver::default() }, 1.0, 0.0, 200),
        },
        OracleCase {
            name: "anticipated_delay",
            description: "f = E[Y(t + 0.25)], eta = 1: delay recursion",
            tolerance: 1e-10,
            run: || deterministic_case(LinearDriver { y_future: 1.0, ..LinearDriver::default() }, 1.0, 0.25, 100),
        },
        OracleCase {
            name: "anticipated_mixed",
            description: "f = 0.2 - 0.5 y + 0.8 E[Y(t + 0.3)]: delay recursion",
            tolerance: 1e-10,
            run: || {
                let driver = LinearDriver { constant: 0.2, y: -0.5, y_future: 0.8 };
                deterministic_case(driver, 1.5, 0.3, 50)
            },
        },
        OracleCase {
            name: "reflected_binding",
            description: "xi = 1, S = 2: Y_0 = 2, K_T = 1",
            tolerance: 1e-12,
            run: || reflected_case(LinearDriver::default(), 1.0, 2.0, 10),
        },
        OracleCase {
            name: "reflected_inactive",
            description: "xi = 5, S = 2: barrier never binds",
            tolerance: 1e-12,
            run: || reflected_case(LinearDriver::default(), 5.0, 2.0, 10),
        },
        OracleCase {
            name: "reflected_drift",
            description: "f = -1, xi = 1, S = 0.5: barrier binds on [0, 0.5]",
            tolerance: 1e-12,
            run: || reflected_case(LinearDriver { constant: -1.0, ..LinearDriver::default() }, 1.0, 0.5, 40),
        },
        OracleCase {
            name: "compensated_martingale",
            description: "xi = Y1_T, one atom with lambda = 4: Y = Y1, Z = 2",
            tolerance: 0.05,
            run: || martingale_case(4.0, 1.0),
        },
        OracleCase {
            name: "zero_martingale",
            description: "xi = 0 with jumps: Y = 0, Z = 0",
            tolerance: 1e-12,
            run: || martingale_case(4.0, 0.0),
        },
    ]
}

/// Runs the selected cases; tolerances are multiplied by `tolerance_scale` and
/// a case passes when its deviation is strictly below the scaled tolerance.
pub fn run_suite(selection: &Selection, tolerance_scale: f64) -> Result<SuiteReport> {
    if !(tolerance_scale.is_finite() && tolerance_scale >= 0.0) {
        return Err(Error::Config(format!("tolerance scale must be nonnegative, got {tolerance_scale}")));
    }
    let all = suite();
    let chosen: Vec<OracleCase> = match selection {
        Selection::All => all,
        Selection::Only(names) => names
            .iter()
            .map(|name| {
                all.iter()
                    .find(|c| c.name == name)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("unknown verification case `{name}`")))
            })
            .collect::<Result<_>>()?,
    };
    let mut warnings = Vec::new();
    if chosen.is_empty() {
        warnings.push("no verification cases selected; nothing to check".to_string());
    }
    let mut cases = Vec::with_capacity(chosen.len());
    for case in chosen {
        let comparison = (case.run)()?;
        let tolerance = case.tolerance * tolerance_scale;
        cases.push(CaseReport {
            name: case.name.to_string(),
            tolerance,
            passed: comparison.max_delta < tolerance,
            comparison,
        });
    }
    Ok(SuiteReport { cases, warnings })
}
