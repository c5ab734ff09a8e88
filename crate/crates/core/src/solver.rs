//! Backward solver for the (reflected) anticipated BDSDE.
//!
//! One backward step from `t_{k+1}` to `t_k` within a Brownian scenario:
//!
//! ```text
//! A     = Y_{k+1} + g(t_{k+1}, Λ_{k+1}, Λ^{φ,ψ}_{k+1}) ΔB_k
//! Â     = E_k[A]
//! Z_k   = Γ_k⁻¹ E_k[(A - Â) ΔH_k]          Γ_k = E_k[ΔH_k ΔH_kᵀ]
//! ỹ_k   = Â + Δt f(t_k, ỹ_k, Z_k, E_k[Y_{k+φ}], E_k[Z_{k+ψ}])
//! ΔK_k  = max(0, S_k - ỹ_k),  Y_k = max(ỹ_k, S_k)
//! ```
//!
//! The backward Brownian integral is evaluated at the right endpoint and
//! `ΔB_k` is known at `t_k` (it belongs to `F_{t,T}^B`), so the `g` term stays
//! inside the regression target. Anticipated times `t + φ(t)` are snapped to
//! the nearest grid node; since the delays are positive those nodes are always
//! solved before `t_k`, and the direct sweep needs no outer iteration.
//!
//! [`picard_phi`] is the frozen-coefficient map: every generator argument is
//! read from a given `(U, V)` instead of the solution being built.

use nalgebra::DMatrix;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::levy::{PathBundle, Scenario, TimeGrid};
use crate::lsmc::{r_squared, Projector, RegressionBasis};
use crate::problem::{ContractionConstants, GenArgs, GeneratorSpec, ProblemSpec, TerminalSpec};
use crate::teugels::TeugelsBasis;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMode {
    /// Single backward sweep.
    Direct,
    /// Iterate the frozen-coefficient map from the extension-padded zero.
    Picard { tol: f64, max_iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub reflect: bool,
    pub mode: SolveMode,
    pub regression: RegressionBasis,
    /// Fixed-point sweeps resolving the implicit dependence of `f` on `Y_{t_k}`.
    pub inner_sweeps: usize,
    /// Rate of the β-norm; `None` takes it from the contraction constants.
    pub beta: Option<f64>,
    pub record_r2: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            reflect: true,
            mode: SolveMode::Direct,
            regression: RegressionBasis::polynomial(2),
            inner_sweeps: 3,
            beta: None,
            record_r2: false,
        }
    }
}

/// Solution of one Brownian scenario. Matrices are node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSolution {
    /// `Y_{t_k}` on `[0, T + K]`.
    pub y: Array2<f64>,
    /// `Z^(i)_{t_k}` on `[0, T + K]`, `z[i - 1]`.
    pub z: Vec<Array2<f64>>,
    /// `K_{t_k}` on `[0, T]`.
    pub k: Array2<f64>,
}

/// Solution grids for every scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub scenarios: Vec<ScenarioSolution>,
}

impl SolverState {
    /// All-zero state on `[0, T)` carrying the extension data `(η, ϑ)` on `[T, T + K]`.
    pub fn extension_padded_zero(
        problem: &ProblemSpec,
        bundle: &PathBundle,
        basis: &TeugelsBasis,
    ) -> Result<Self> {
        let p = basis.order();
        let grid = &bundle.grid;
        let n = grid.terminal_index();
        let scenarios = bundle
            .scenarios
            .iter()
            .map(|s| {
                let mut sol = ScenarioSolution {
                    y: Array2::zeros((grid.n_nodes(), s.n_paths())),
                    z: vec![Array2::zeros((grid.n_nodes(), s.n_paths())); p],
                    k: Array2::zeros((n + 1, s.n_paths())),
                };
                fill_extension(problem, bundle, s, &mut sol);
                sol
            })
            .collect();
        Ok(Self { scenarios })
    }

    pub fn n_paths_total(&self) -> usize {
        self.scenarios.iter().map(|s| s.y.ncols()).sum()
    }

    pub fn order(&self) -> usize {
        self.scenarios.first().map_or(0, |s| s.z.len())
    }

    /// `Y_{t_k}` averaged over all paths.
    pub fn mean_y(&self, k: usize) -> f64 {
        self.mean_of(|s| s.y.row(k).sum())
    }

    pub fn mean_z(&self, i: usize, k: usize) -> f64 {
        self.mean_of(|s| s.z[i - 1].row(k).sum())
    }

    pub fn mean_k(&self, k: usize) -> f64 {
        self.mean_of(|s| s.k.row(k).sum())
    }

    fn mean_of(&self, f: impl Fn(&ScenarioSolution) -> f64) -> f64 {
        self.scenarios.iter().map(f).sum::<f64>() / self.n_paths_total() as f64
    }
}

/// Run diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Rate of the β-norm used for the Picard distances.
    pub beta: f64,
    pub contraction: ContractionConstants,
    /// `ĉ < 1` for the declared constants.
    pub convergence_guaranteed: bool,
    pub picard_iterations: usize,
    /// β-norm of each Picard iterate.
    pub beta_norms: Vec<f64>,
    /// β-distance between successive iterates, starting with `‖Φ(U⁰) - U⁰‖`.
    pub distances: Vec<f64>,
    pub distance_ratios: Vec<f64>,
    /// `Σ_k (Y_{t_k} - S_{t_k}) ΔK_k` over all paths.
    pub skorokhod_residual: f64,
    /// Largest single increment `ΔK_k`.
    pub max_k_increment: f64,
    /// Standard error of the `Y_0` estimate.
    pub y0_std_error: f64,
    /// Mean `R²` of the `E_k[A]` regressions per step (empty unless recorded).
    pub r2_per_step: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Everything a backward sweep needs besides the frozen input.
struct Context<'a> {
    problem: &'a ProblemSpec,
    bundle: &'a PathBundle,
    p: usize,
    opts: SolveOptions,
    reflect: bool,
    /// Snapped node of `t_k + φ(t_k)` for `k ≤ N`.
    phi_idx: Vec<usize>,
    psi_idx: Vec<usize>,
    uses_y_future: bool,
    uses_z_future: bool,
    contraction: ContractionConstants,
    beta: f64,
    warnings: Vec<String>,
}

fn snap_delays(
    grid: &TimeGrid,
    delay: Option<&crate::problem::DelaySpec>,
    name: &str,
    warnings: &mut Vec<String>,
) -> Vec<usize> {
    let n = grid.terminal_index();
    let Some(delay) = delay else {
        return vec![0; n + 1];
    };
    let mut worst = 0.0_f64;
    let mut forced = 0;
    let idx = (0..=n)
        .map(|k| {
            let t = grid.time(k);
            let target = t + delay.eval(t, grid.horizon());
            let mut j = grid.nearest_node(target);
            if j <= k {
                j = (k + 1).min(grid.n_nodes() - 1);
                forced += 1;
            }
            worst = worst.max((grid.time(j) - target).abs());
            j
        })
        .collect();
    if worst > 0.5 * grid.main_dt() * (1.0 + 1e-9) {
        warnings.push(format!(
            "{name}: snapping anticipated times to the grid moves them by up to {worst:.3e} (> dt/2)"
        ));
    }
    if forced > 0 {
        warnings.push(format!(
            "{name}: delay shorter than half a step at {forced} nodes; using the next node"
        ));
    }
    idx
}

impl<'a> Context<'a> {
    fn new(
        problem: &'a ProblemSpec,
        bundle: &'a PathBundle,
        basis: &TeugelsBasis,
        opts: SolveOptions,
    ) -> Result<Self> {
        let validated = problem.validate()?;
        let grid = &bundle.grid;
        if (grid.horizon() - problem.horizon).abs() > 1e-12 * problem.horizon
            || (grid.extension() - problem.extension).abs() > 1e-12 * (1.0 + problem.extension)
        {
            return Err(Error::InvalidSpec(format!(
                "grid covers [0, {} + {}] but the problem is posed on [0, {} + {}]",
                grid.horizon(),
                grid.extension(),
                problem.horizon,
                problem.extension
            )));
        }
        if bundle.spec != problem.levy {
            return Err(Error::InvalidSpec(
                "path bundle was simulated from a different Lévy specification".into(),
            ));
        }
        problem.check_barrier_on_grid(grid)?;
        let p = basis.order();
        if bundle.teugels_order() != p {
            return Err(Error::Dimension {
                what: "Teugels increments in the path bundle",
                expected: p,
                found: bundle.teugels_order(),
            });
        }
        for (what, len) in [
            ("Z coefficients of f", problem.f.family.z_len()),
            ("Z coefficients of g", problem.g.family.z_len()),
            ("components of vartheta", problem.vartheta.len()),
        ] {
            if len > p {
                return Err(Error::Dimension {
                    what,
                    expected: p,
                    found: len,
                });
            }
        }
        let mut warnings = Vec::new();
        let phi_idx = snap_delays(grid, problem.phi.as_ref(), "phi", &mut warnings);
        let psi_idx = snap_delays(grid, problem.psi.as_ref(), "psi", &mut warnings);
        let contraction = validated.contraction;
        let beta = opts.beta.unwrap_or(contraction.beta);
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidSpec(format!("beta must be finite and nonnegative, got {beta}")));
        }
        if let SolveMode::Picard { .. } = opts.mode {
            if !contraction.feasible {
                warnings.push(format!(
                    "contraction constants infeasible (inf c_hat = {:.4} >= 1); Picard convergence is not guaranteed",
                    contraction.c_hat_infimum
                ));
            }
        }
        Ok(Self {
            problem,
            bundle,
            p,
            opts,
            reflect: opts.reflect && problem.barrier.is_active(),
            phi_idx,
            psi_idx,
            uses_y_future: problem.f.family.uses_y_future() || problem.g.family.uses_y_future(),
            uses_z_future: problem.f.family.uses_z_future() || problem.g.family.uses_z_future(),
            contraction,
            beta,
            warnings,
        })
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            beta: self.beta,
            contraction: self.contraction,
            convergence_guaranteed: self.contraction.feasible,
            picard_iterations: 0,
            beta_norms: Vec::new(),
            distances: Vec::new(),
            distance_ratios: Vec::new(),
            skorokhod_residual: 0.0,
            max_k_increment: 0.0,
            y0_std_error: 0.0,
            r2_per_step: Vec::new(),
            warnings: self.warnings.clone(),
        }
    }
}

fn terminal_values(problem: &ProblemSpec, bundle: &PathBundle, s: &Scenario) -> Vec<f64> {
    let n = bundle.grid.terminal_index();
    s.levy
        .row(n)
        .iter()
        .map(|&l| problem.xi.eval(l, problem.horizon, &problem.levy))
        .collect()
}

/// Writes `(ξ, ϑ_T)` at `T` and `(η, ϑ)` on the extension nodes.
fn fill_extension(problem: &ProblemSpec, bundle: &PathBundle, s: &Scenario, sol: &mut ScenarioSolution) {
    let grid = &bundle.grid;
    let xi = terminal_values(problem, bundle, s);
    for k in grid.terminal_index()..grid.n_nodes() {
        let t = grid.time(k);
        for (j, &x) in xi.iter().enumerate() {
            sol.y[[k, j]] = if k == grid.terminal_index() {
                x
            } else {
                problem.eta.eval(t, problem.horizon, x)
            };
        }
        for (i, z) in sol.z.iter_mut().enumerate() {
            z.row_mut(k).fill(problem.vartheta.component(i + 1));
        }
    }
}

struct SweepOutput {
    solution: ScenarioSolution,
    skorokhod: f64,
    max_dk: f64,
    y0_samples: Vec<f64>,
    r2: Vec<f64>,
}

/// Anticipated arguments `E_m[Y_{φ(m)}]` and `E_m[Z_{ψ(m)}]` for one node.
struct Anticipated {
    y: Vec<f64>,
    z: Vec<Vec<f64>>,
}

fn row(m: &Array2<f64>, k: usize) -> &[f64] {
    m.row(k).to_slice().expect("node-major rows are contiguous")
}

fn eval_generator(
    gen: &GeneratorSpec,
    n_paths: usize,
    y: impl Fn(usize) -> f64,
    z_src: &[&[f64]],
    ant: &Anticipated,
) -> Vec<f64> {
    let p = z_src.len();
    let mut z = vec![0.0; p];
    let mut zf = vec![0.0; ant.z.len()];
    (0..n_paths)
        .map(|j| {
            for i in 0..p {
                z[i] = z_src[i][j];
            }
            for (i, v) in ant.z.iter().enumerate() {
                zf[i] = v[j];
            }
            gen.eval(&GenArgs {
                y: y(j),
                z: &z,
                y_future: ant.y.get(j).copied().unwrap_or(0.0),
                z_future: &zf,
            })
        })
        .collect()
}

impl Context<'_> {
    fn projector<'s>(&self, s: &'s Scenario, k: usize) -> Result<Projector<'s>> {
        let states = s.levy.row(k).to_slice().expect("contiguous");
        let counts = s.jump_count.row(k).to_slice().expect("contiguous");
        Projector::new(states, Some(counts), &self.opts.regression)
    }

    fn anticipated(&self, proj: &Projector<'_>, src: &ScenarioSolution, m: usize) -> Result<Anticipated> {
        let y = if self.uses_y_future {
            proj.project(row(&src.y, self.phi_idx[m]))?
        } else {
            Vec::new()
        };
        let z = if self.uses_z_future {
            src.z
                .iter()
                .map(|zi| proj.project(row(zi, self.psi_idx[m])))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Anticipated { y, z })
    }

    fn sweep(&self, scenario: usize, frozen: Option<&ScenarioSolution>) -> Result<SweepOutput> {
        let problem = self.problem;
        let grid = &self.bundle.grid;
        let s = &self.bundle.scenarios[scenario];
        let n = grid.terminal_index();
        let n_paths = s.n_paths();
        let p = self.p;

        let mut sol = ScenarioSolution {
            y: Array2::zeros((grid.n_nodes(), n_paths)),
            z: vec![Array2::zeros((grid.n_nodes(), n_paths)); p],
            k: Array2::zeros((n + 1, n_paths)),
        };
        fill_extension(problem, self.bundle, s, &mut sol);

        // `S ≤ η` pathwise on (T, T + K] for path-dependent data.
        if problem.barrier.is_active() && (problem.barrier.depends_on_path() || problem.xi.constant_value().is_none()) {
            for k in n + 1..grid.n_nodes() {
                for j in 0..n_paths {
                    let sv = problem.barrier.eval(grid.time(k), s.levy[[k, j]]);
                    if sv > sol.y[[k, j]] {
                        return Err(Error::assumption(
                            Assumption::H2Barrier,
                            format!("S = {sv} exceeds eta = {} at t = {}", sol.y[[k, j]], grid.time(k)),
                        ));
                    }
                }
            }
        }

        let needs_anticipation = self.uses_y_future || self.uses_z_future;
        let g_is_zero = matches!(problem.g.family, crate::problem::GeneratorFamily::Zero);

        let mut ant_next = if needs_anticipation {
            let proj = self.projector(s, n)?;
            self.anticipated(&proj, frozen.unwrap_or(&sol), n)?
        } else {
            Anticipated { y: Vec::new(), z: Vec::new() }
        };

        let mut skorokhod = 0.0;
        let mut max_dk: f64 = 0.0;
        let mut r2 = Vec::new();
        let mut y0_samples = Vec::new();

        for k in (0..n).rev() {
            let dt = grid.dt(k);
            let proj = self.projector(s, k)?;

            // g(t_{k+1}, Λ_{k+1}, Λ^{φ,ψ}_{k+1}) ΔB_k
            let target: Vec<f64> = if g_is_zero {
                row(&sol.y, k + 1).to_vec()
            } else {
                let src = frozen.unwrap_or(&sol);
                let z_src: Vec<&[f64]> = src.z.iter().map(|z| row(z, k + 1)).collect();
                let yk1 = row(&src.y, k + 1);
                let g = eval_generator(&problem.g, n_paths, |j| yk1[j], &z_src, &ant_next);
                let db = s.db[k];
                row(&sol.y, k + 1)
                    .iter()
                    .zip(&g)
                    .map(|(y, g)| y + g * db)
                    .collect()
            };
            let a_hat = proj.project(&target)?;
            if self.opts.record_r2 {
                r2.push(r_squared(&target, &a_hat));
            }

            if p > 0 {
                let z = extract_z(&proj, s, k, &target, &a_hat, dt)?;
                for (i, zi) in z.into_iter().enumerate() {
                    sol.z[i].row_mut(k).assign(&ndarray::ArrayView1::from(&zi));
                }
            }

            let ant = if needs_anticipation {
                self.anticipated(&proj, frozen.unwrap_or(&sol), k)?
            } else {
                Anticipated { y: Vec::new(), z: Vec::new() }
            };

            let y_tilde: Vec<f64> = match frozen {
                Some(u) => {
                    let z_src: Vec<&[f64]> = u.z.iter().map(|z| row(z, k)).collect();
                    let uk = row(&u.y, k);
                    let f = eval_generator(&problem.f, n_paths, |j| uk[j], &z_src, &ant);
                    a_hat.iter().zip(&f).map(|(a, f)| a + dt * f).collect()
                }
                None => {
                    let z_src: Vec<&[f64]> = sol.z.iter().map(|z| row(z, k)).collect();
                    let sweeps = if problem.f.family.is_constant() { 1 } else { self.opts.inner_sweeps.max(1) };
                    let mut y = a_hat.clone();
                    for _ in 0..sweeps {
                        let f = eval_generator(&problem.f, n_paths, |j| y[j], &z_src, &ant);
                        y = a_hat.iter().zip(&f).map(|(a, f)| a + dt * f).collect();
                    }
                    y
                }
            };

            if k == 0 {
                y0_samples = target
                    .iter()
                    .zip(&a_hat)
                    .zip(&y_tilde)
                    .map(|((a, ah), yt)| a + (yt - ah))
                    .collect();
            }

            let t = grid.time(k);
            for j in 0..n_paths {
                let yt = y_tilde[j];
                let barrier = problem.barrier.eval(t, s.levy[[k, j]]);
                if self.reflect && yt < barrier {
                    let push = barrier - yt;
                    sol.y[[k, j]] = barrier;
                    sol.k[[k + 1, j]] = push;
                    max_dk = max_dk.max(push);
                } else {
                    sol.y[[k, j]] = yt;
                }
                if self.reflect {
                    skorokhod += (sol.y[[k, j]] - barrier) * sol.k[[k + 1, j]];
                }
            }
            ant_next = ant;
        }

        // Increments stored at k + 1 become running sums with K_0 = 0.
        for k in 1..=n {
            for j in 0..n_paths {
                sol.k[[k, j]] += sol.k[[k - 1, j]];
            }
        }
        r2.reverse();
        Ok(SweepOutput {
            solution: sol,
            skorokhod,
            max_dk,
            y0_samples,
            r2,
        })
    }

    fn sweep_all(&self, frozen: Option<&SolverState>) -> Result<(SolverState, Diagnostics)> {
        let outputs = (0..self.bundle.n_scenarios())
            .into_par_iter()
            .map(|s| self.sweep(s, frozen.map(|f| &f.scenarios[s])))
            .collect::<Result<Vec<_>>>()?;
        let mut diag = self.diagnostics();
        let n_total: usize = outputs.iter().map(|o| o.y0_samples.len()).sum();
        let mean = outputs.iter().flat_map(|o| &o.y0_samples).sum::<f64>() / n_total as f64;
        let var = outputs
            .iter()
            .flat_map(|o| &o.y0_samples)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (n_total.max(2) - 1) as f64;
        diag.y0_std_error = (var / n_total as f64).sqrt();
        diag.skorokhod_residual = outputs.iter().map(|o| o.skorokhod).sum();
        diag.max_k_increment = outputs.iter().map(|o| o.max_dk).fold(0.0, f64::max);
        if self.opts.record_r2 {
            let steps = self.bundle.grid.terminal_index();
            diag.r2_per_step = (0..steps)
                .map(|k| outputs.iter().map(|o| o.r2[k]).sum::<f64>() / outputs.len() as f64)
                .collect();
        }
        let state = SolverState {
            scenarios: outputs.into_iter().map(|o| o.solution).collect(),
        };
        Ok((state, diag))
    }
}

fn check_frozen(frozen: &SolverState, bundle: &PathBundle, p: usize) -> Result<()> {
    if frozen.scenarios.len() != bundle.n_scenarios() {
        return Err(Error::Dimension {
            what: "scenarios of the frozen input",
            expected: bundle.n_scenarios(),
            found: frozen.scenarios.len(),
        });
    }
    for s in &frozen.scenarios {
        if s.y.dim() != (bundle.grid.n_nodes(), bundle.n_paths) || s.z.len() != p {
            return Err(Error::Dimension {
                what: "frozen input grid",
                expected: bundle.grid.n_nodes(),
                found: s.y.nrows(),
            });
        }
    }
    Ok(())
}

/// Backward step from `t_{k+1}` to `t_k` for every scenario.
///
/// `state` must hold the solution at all nodes after `k` (and the extension
/// data); only row `k` of `Y`, `Z` and the increment `K_{k+1} - K_k` change.
/// This re-runs the per-scenario sweep logic for a single node and is meant
/// for inspection; [`solve`] performs whole sweeps.
pub fn step_backward(
    state: &mut SolverState,
    problem: &ProblemSpec,
    bundle: &PathBundle,
    basis: &TeugelsBasis,
    k: usize,
    reflect: bool,
    regression: RegressionBasis,
) -> Result<()> {
    let n = bundle.grid.terminal_index();
    if k >= n {
        return Err(Error::Dimension {
            what: "backward step index",
            expected: n,
            found: k,
        });
    }
    check_frozen(state, bundle, basis.order())?;
    let opts = SolveOptions {
        reflect,
        regression,
        ..SolveOptions::default()
    };
    let ctx = Context::new(problem, bundle, basis, opts)?;
    // Restrict the sweep to the last step by pretending the grid ends at k + 1:
    // run the full sweep against a truncated copy of the state.
    let grid = &bundle.grid;
    for (idx, sol) in state.scenarios.iter_mut().enumerate() {
        let s = &bundle.scenarios[idx];
        let single = single_step(&ctx, s, sol, k)?;
        let n_paths = s.n_paths();
        for j in 0..n_paths {
            sol.y[[k, j]] = single.y[j];
            for i in 0..ctx.p {
                sol.z[i][[k, j]] = single.z[i][j];
            }
            let before = sol.k[[k, j]];
            let after = sol.k[[k + 1, j]];
            let delta = single.dk[j];
            // Keep K consistent: increment over [t_k, t_{k+1}] becomes `delta`.
            let shift = before + delta - after;
            for m in k + 1..=grid.terminal_index() {
                sol.k[[m, j]] += shift;
            }
        }
    }
    Ok(())
}

/// `Z_k = Γ_k⁻¹ E_k[(A - Â) ΔH_k]` with `Γ_k = E_k[ΔH_k ΔH_kᵀ]`.
///
/// Both conditional moments come from the same projector, so the fitting noise
/// of the numerator is largely cancelled by the denominator. Paths where the
/// fitted `Γ_k` is not safely positive definite use the scenario-wide second
/// moment, and `Δt · I` if that is singular too.
fn extract_z(
    proj: &Projector<'_>,
    s: &Scenario,
    k: usize,
    target: &[f64],
    a_hat: &[f64],
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let p = s.dh.len();
    let n_paths = target.len();
    let dh: Vec<&[f64]> = s.dh.iter().map(|d| row(d, k)).collect();
    let mut cov = Vec::with_capacity(p);
    for h in &dh {
        let t: Vec<f64> = target.iter().zip(a_hat).zip(*h).map(|((a, b), h)| (a - b) * h).collect();
        cov.push(proj.project(&t)?);
    }
    let mut second = vec![Vec::new(); p * p];
    for a in 0..p {
        for b in 0..=a {
            let t: Vec<f64> = dh[a].iter().zip(dh[b]).map(|(x, y)| x * y).collect();
            second[a * p + b] = proj.project(&t)?;
        }
    }
    let global = DMatrix::<f64>::from_fn(p, p, |a, b| {
        dh[a].iter().zip(dh[b]).map(|(x, y)| x * y).sum::<f64>() / n_paths as f64
    });
    let fallback = global
        .clone()
        .cholesky()
        .unwrap_or_else(|| DMatrix::<f64>::from_diagonal_element(p, p, dt).cholesky().expect("dt > 0"));
    let mut z = vec![vec![0.0; n_paths]; p];
    let mut gamma = DMatrix::<f64>::zeros(p, p);
    let mut rhs = nalgebra::DVector::<f64>::zeros(p);
    for j in 0..n_paths {
        for a in 0..p {
            rhs[a] = cov[a][j];
            for b in 0..=a {
                gamma[(a, b)] = second[a * p + b][j];
                gamma[(b, a)] = gamma[(a, b)];
            }
        }
        let safe = (0..p).all(|a| gamma[(a, a)] > 0.05 * global[(a, a)]);
        let zj = match gamma.clone().cholesky().filter(|_| safe) {
            Some(chol) => chol.solve(&rhs),
            None => fallback.solve(&rhs),
        };
        for a in 0..p {
            z[a][j] = zj[a];
        }
    }
    Ok(z)
}

struct SingleStep {
    y: Vec<f64>,
    z: Vec<Vec<f64>>,
    dk: Vec<f64>,
}

fn single_step(ctx: &Context<'_>, s: &Scenario, sol: &ScenarioSolution, k: usize) -> Result<SingleStep> {
    let problem = ctx.problem;
    let grid = &ctx.bundle.grid;
    let n_paths = s.n_paths();
    let p = ctx.p;
    let dt = grid.dt(k);
    let needs_anticipation = ctx.uses_y_future || ctx.uses_z_future;
    let none = Anticipated { y: Vec::new(), z: Vec::new() };

    let ant_next = if needs_anticipation {
        let proj = ctx.projector(s, k + 1)?;
        ctx.anticipated(&proj, sol, k + 1)?
    } else {
        none
    };
    let proj = ctx.projector(s, k)?;
    let z_next: Vec<&[f64]> = sol.z.iter().map(|z| row(z, k + 1)).collect();
    let yk1 = row(&sol.y, k + 1);
    let g = eval_generator(&problem.g, n_paths, |j| yk1[j], &z_next, &ant_next);
    let target: Vec<f64> = yk1.iter().zip(&g).map(|(y, g)| y + g * s.db[k]).collect();
    let a_hat = proj.project(&target)?;
    let z = if p > 0 {
        extract_z(&proj, s, k, &target, &a_hat, dt)?
    } else {
        Vec::new()
    };
    let ant = if needs_anticipation {
        ctx.anticipated(&proj, sol, k)?
    } else {
        Anticipated { y: Vec::new(), z: Vec::new() }
    };
    let z_src: Vec<&[f64]> = z.iter().map(|v| v.as_slice()).collect();
    let sweeps = if problem.f.family.is_constant() { 1 } else { ctx.opts.inner_sweeps.max(1) };
    let mut y = a_hat.clone();
    for _ in 0..sweeps {
        let f = eval_generator(&problem.f, n_paths, |j| y[j], &z_src, &ant);
        y = a_hat.iter().zip(&f).map(|(a, f)| a + dt * f).collect();
    }
    let t = grid.time(k);
    let mut dk = vec![0.0; n_paths];
    for j in 0..n_paths {
        let barrier = problem.barrier.eval(t, s.levy[[k, j]]);
        if ctx.reflect && y[j] < barrier {
            dk[j] = barrier - y[j];
            y[j] = barrier;
        }
    }
    Ok(SingleStep { y, z, dk })
}

/// Solves the equation on the bundle's grid.
pub fn solve(
    problem: &ProblemSpec,
    bundle: &PathBundle,
    basis: &TeugelsBasis,
    opts: SolveOptions,
) -> Result<(SolverState, Diagnostics)> {
    let ctx = Context::new(problem, bundle, basis, opts)?;
    match opts.mode {
        SolveMode::Direct => ctx.sweep_all(None),
        SolveMode::Picard { tol, max_iters } => {
            let grid = &bundle.grid;
            let mut current = SolverState::extension_padded_zero(problem, bundle, basis)?;
            let mut diag = ctx.diagnostics();
            for _ in 0..max_iters.max(1) {
                let (next, step_diag) = ctx.sweep_all(Some(&current))?;
                let d = beta_distance(&next, &current, grid, ctx.beta)?;
                if let Some(&prev) = diag.distances.last() {
                    diag.distance_ratios.push(if prev > 0.0 { d / prev } else { 0.0 });
                }
                diag.beta_norms.push(beta_norm(&next, grid, ctx.beta)?);
                diag.distances.push(d);
                diag.picard_iterations += 1;
                diag.skorokhod_residual = step_diag.skorokhod_residual;
                diag.max_k_increment = step_diag.max_k_increment;
                diag.y0_std_error = step_diag.y0_std_error;
                diag.r2_per_step = step_diag.r2_per_step;
                current = next;
                if d < tol {
                    break;
                }
            }
            Ok((current, diag))
        }
    }
}

/// The frozen-coefficient map `Φ(U, V)`: one backward sweep with `f` and `g`
/// evaluated at `θ_s = (U_{s-}, V_s)` and `θ^{φ,ψ}_s = (U_{s+φ(s)-}, V_{s+ψ(s)})`.
pub fn picard_phi(
    problem: &ProblemSpec,
    bundle: &PathBundle,
    basis: &TeugelsBasis,
    frozen: &SolverState,
    opts: SolveOptions,
) -> Result<(SolverState, Diagnostics)> {
    check_frozen(frozen, bundle, basis.order())?;
    let ctx = Context::new(problem, bundle, basis, opts)?;
    ctx.sweep_all(Some(frozen))
}

/// `(Σ_k e^{β t_k} (|ΔY_{t_k}|² + Σ_i |ΔZ^(i)_{t_k}|²) Δt_k)^{1/2}` averaged over
/// paths, the left Riemann sum of the β-norm on `[0, T + K]`.
pub fn beta_distance(a: &SolverState, b: &SolverState, grid: &TimeGrid, beta: f64) -> Result<f64> {
    if a.scenarios.len() != b.scenarios.len() || a.order() != b.order() {
        return Err(Error::Dimension {
            what: "states compared in the beta-norm",
            expected: a.scenarios.len(),
            found: b.scenarios.len(),
        });
    }
    let mut total = 0.0;
    let mut paths = 0usize;
    for (sa, sb) in a.scenarios.iter().zip(&b.scenarios) {
        if sa.y.dim() != sb.y.dim() || sa.y.nrows() != grid.n_nodes() {
            return Err(Error::Dimension {
                what: "grid of states compared in the beta-norm",
                expected: grid.n_nodes(),
                found: sb.y.nrows(),
            });
        }
        paths += sa.y.ncols();
        for k in 0..grid.n_steps() {
            let w = (beta * grid.time(k)).exp() * grid.dt(k);
            let mut acc = 0.0;
            for j in 0..sa.y.ncols() {
                let mut v = (sa.y[[k, j]] - sb.y[[k, j]]).powi(2);
                for (za, zb) in sa.z.iter().zip(&sb.z) {
                    v += (za[[k, j]] - zb[[k, j]]).powi(2);
                }
                acc += v;
            }
            total += w * acc;
        }
    }
    Ok((total / paths as f64).sqrt())
}

/// β-norm of a single state.
pub fn beta_norm(a: &SolverState, grid: &TimeGrid, beta: f64) -> Result<f64> {
    let zero = SolverState {
        scenarios: a
            .scenarios
            .iter()
            .map(|s| ScenarioSolution {
                y: Array2::zeros(s.y.dim()),
                z: s.z.iter().map(|z| Array2::zeros(z.dim())).collect(),
                k: Array2::zeros(s.k.dim()),
            })
            .collect(),
    };
    beta_distance(a, &zero, grid, beta)
}

/// Deterministic integrand `t ↦ h(t)` for the Itô identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrand {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
    },
}

impl Integrand {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Integrand::Zero => 0.0,
            Integrand::Constant { value } => value,
            Integrand::Affine { intercept, slope } => intercept + slope * t,
        }
    }
}

/// Pathwise defect of the squared-value identity on `[0, T]`.
///
/// `α` is accumulated forward as
/// `α_{k+1} = α_k + β_k Δt + γ_{k+1} ΔB_k + Σ_i σ^(i)_k ΔH^(i)_k`
/// (the Brownian integral is backward, so `γ` is read at the right end). The
/// returned value is `| |α_T|² - RHS |` with
///
/// ```text
/// RHS = |α_0|² + 2 Σ α_k β_k Δt + 2 Σ α_{k+1} γ_{k+1} ΔB_k + 2 Σ_i Σ α_k σ^(i)_k ΔH^(i)_k
///       - Σ |γ_{k+1}|² Δt + Σ_{i,j} Σ σ^(i)_k σ^(j)_k ΔH^(i)_k ΔH^(j)_k
/// ```
///
/// where the last sum is the realized bracket `[H^(i), H^(j)]` on the grid.
pub fn ito_residual(
    alpha0: f64,
    beta: Integrand,
    gamma: Integrand,
    sigma: &[Integrand],
    bundle: &PathBundle,
) -> Result<Vec<f64>> {
    let p = bundle.teugels_order();
    if sigma.len() > p {
        return Err(Error::Dimension {
            what: "sigma integrands",
            expected: p,
            found: sigma.len(),
        });
    }
    let grid = &bundle.grid;
    let n = grid.terminal_index();
    let mut out = Vec::with_capacity(bundle.total_paths());
    for s in &bundle.scenarios {
        for j in 0..s.n_paths() {
            let mut alpha = alpha0;
            let mut rhs = alpha0 * alpha0;
            for k in 0..n {
                let (t, t1, dt, db) = (grid.time(k), grid.time(k + 1), grid.dt(k), s.db[k]);
                let b = beta.eval(t);
                let g = gamma.eval(t1);
                let mut jump = 0.0;
                let mut bracket = 0.0;
                for (i, si) in sigma.iter().enumerate() {
                    let hi = s.dh[i][[k, j]];
                    let vi = si.eval(t);
                    jump += vi * hi;
                    for (m, sm) in sigma.iter().enumerate() {
                        bracket += vi * sm.eval(t) * hi * s.dh[m][[k, j]];
                    }
                }
                let next = alpha + b * dt + g * db + jump;
                rhs += 2.0 * alpha * b * dt + 2.0 * next * g * db + 2.0 * alpha * jump - g * g * dt + bracket;
                alpha = next;
            }
            out.push((alpha * alpha - rhs).abs());
        }
    }
    Ok(out)
}

/// Root-mean-square defect of `ξ̂ = Y_0 + Σ_i Σ_k Z^(i)_{t_k} ΔH^(i)_k` against `ξ`
/// for the equation with `f = g = 0`.
pub fn representation_residual(
    xi: TerminalSpec,
    bundle: &PathBundle,
    basis: &TeugelsBasis,
    regression: RegressionBasis,
) -> Result<f64> {
    let grid = &bundle.grid;
    let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), grid.horizon(), 0.0);
    problem.extension = grid.extension();
    problem.xi = xi;
    problem.eta = crate::problem::ExtensionSpec::Terminal;
    let opts = SolveOptions {
        reflect: false,
        regression,
        ..SolveOptions::default()
    };
    let (state, _) = solve(&problem, bundle, basis, opts)?;
    let n = grid.terminal_index();
    let mut sum = 0.0;
    for (s, sol) in bundle.scenarios.iter().zip(&state.scenarios) {
        let xi_vals = terminal_values(&problem, bundle, s);
        for j in 0..s.n_paths() {
            let mut rebuilt = sol.y[[0, j]];
            for k in 0..n {
                for i in 0..basis.order() {
                    rebuilt += sol.z[i][[k, j]] * s.dh[i][[k, j]];
                }
            }
            sum += (rebuilt - xi_vals[j]).powi(2);
        }
    }
    Ok((sum / bundle.total_paths() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevySpec;
    use crate::problem::{BarrierSpec, DelaySpec, ExtensionSpec, GeneratorFamily};
    use crate::teugels::simulate_with_basis;

    fn deterministic(n: usize, ext: f64, n_ext: usize) -> (PathBundle, TeugelsBasis) {
        let spec = LevySpec::pure_jump(0.0, &[]).unwrap();
        let grid = TimeGrid::new(1.0, ext, n, n_ext).unwrap();
        simulate_with_basis(&spec, &grid, 1, 4, 1, None).unwrap()
    }

    fn direct(reflect: bool) -> SolveOptions {
        SolveOptions {
            reflect,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn constant_terminal_stays_constant() {
        let spec = LevySpec::pure_jump(0.1, &[(1.0, 2.0), (-0.5, 1.0)]).unwrap();
        let grid = TimeGrid::main_only(1.0, 20).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 2, 200, 3, None).unwrap();
        let problem = ProblemSpec::constant_terminal(spec, 1.0, 3.5);
        let (state, diag) = solve(&problem, &bundle, &basis, direct(true)).unwrap();
        for s in &state.scenarios {
            assert!(s.y.iter().all(|&v| v == 3.5));
            assert!(s.z.iter().all(|z| z.iter().all(|&v| v == 0.0)));
            assert!(s.k.iter().all(|&v| v == 0.0));
        }
        assert_eq!(diag.skorokhod_residual, 0.0);
    }

    #[test]
    fn compensated_terminal_recovers_its_integrand() {
        // Y^(1) = H^(1) / c_{1,1} and c_{1,1} = λ^{-1/2}.
        let spec = LevySpec::pure_jump(0.0, &[(1.0, 4.0)]).unwrap();
        let grid = TimeGrid::main_only(1.0, 10).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 4000, 11, None).unwrap();
        let mut problem = ProblemSpec::constant_terminal(spec.clone(), 1.0, 0.0);
        problem.xi = TerminalSpec::LinearCompensated { intercept: 0.0, slope: 1.0 };
        problem.eta = ExtensionSpec::Terminal;
        let (state, _) = solve(&problem, &bundle, &basis, direct(false)).unwrap();
        for k in 0..10 {
            let z = state.mean_z(1, k);
            assert!((z - 2.0).abs() < 0.04, "Z at node {k}: {z}");
        }
        let s = &bundle.scenarios[0];
        let sol = &state.scenarios[0];
        let rms = (s.ycomp[0].iter().zip(sol.y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / sol.y.len() as f64)
            .sqrt();
        assert!(rms < 0.05, "rms {rms}");
    }

    #[test]
    fn reflected_deterministic_case() {
        let (bundle, basis) = deterministic(10, 0.0, 0);
        let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), 1.0, 1.0);
        problem.barrier = BarrierSpec::Constant { value: 2.0 };
        let (state, diag) = solve(&problem, &bundle, &basis, direct(true)).unwrap();
        let sol = &state.scenarios[0];
        assert_eq!(sol.y[[0, 0]], 2.0);
        assert_eq!(sol.k[[10, 0]], 1.0);
        assert_eq!(sol.k[[10, 0]] - sol.k[[9, 0]], 1.0);
        assert_eq!(sol.k[[9, 0]], 0.0);
        assert_eq!(diag.skorokhod_residual, 0.0);
        assert_eq!(diag.max_k_increment, 1.0);
    }

    #[test]
    fn far_barrier_is_bit_identical_to_no_reflection() {
        let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0)]).unwrap();
        let grid = TimeGrid::main_only(1.0, 8).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 2, 300, 5, None).unwrap();
        let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
        problem.xi = TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 };
        problem.eta = ExtensionSpec::Terminal;
        problem.f = GeneratorSpec::new(GeneratorFamily::Affine { constant: 0.1, y: 0.5, z: vec![0.2] }, 0.3);
        let (free, _) = solve(&problem, &bundle, &basis, direct(false)).unwrap();
        problem.barrier = BarrierSpec::Constant { value: -1e6 };
        let (low, diag) = solve(&problem, &bundle, &basis, direct(true)).unwrap();
        assert_eq!(free, low);
        assert!(low.scenarios.iter().all(|s| s.k.iter().all(|&v| v == 0.0)));
        assert_eq!(diag.skorokhod_residual, 0.0);
    }

    #[test]
    fn linear_generator_tracks_exponential() {
        let mut errs = Vec::new();
        for n in [50, 100, 200] {
            let (bundle, basis) = deterministic(n, 0.0, 0);
            let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), 1.0, 1.0);
            problem.f = GeneratorSpec::new(GeneratorFamily::Affine { constant: 0.0, y: 1.0, z: vec![] }, 1.0);
            let (state, _) = solve(&problem, &bundle, &basis, direct(false)).unwrap();
            errs.push((state.mean_y(0) - std::f64::consts::E).abs());

            let explicit = SolveOptions { inner_sweeps: 1, ..direct(false) };
            let (state, _) = solve(&problem, &bundle, &basis, explicit).unwrap();
            let product = (1.0 + 1.0 / n as f64).powi(n as i32);
            assert!((state.mean_y(0) - product).abs() < 1e-12);
        }
        assert!(errs[2] < 0.03 && errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn delay_generator_follows_backward_recursion() {
        let n = 40;
        let (bundle, basis) = deterministic(n, 0.25, 10);
        let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), 1.0, 1.0);
        problem.extension = 0.25;
        problem.phi = Some(DelaySpec::Constant { delta: 0.25 });
        problem.f = GeneratorSpec::new(
            GeneratorFamily::AnticipatedAffine { constant: 0.0, y: 0.0, z: vec![], y_future: 1.0, z_future: vec![] },
            1.0,
        );
        let (state, diag) = solve(&problem, &bundle, &basis, direct(false)).unwrap();
        assert!(diag.warnings.is_empty(), "{:?}", diag.warnings);
        let mut y = vec![1.0; n + 11];
        for k in (0..n).rev() {
            y[k] = y[k + 1] + y[k + 10] / n as f64;
        }
        for k in 0..=n + 10 {
            assert!((state.scenarios[0].y[[k, 0]] - y[k]).abs() < 1e-12, "node {k}");
        }
        // Last delay window integrates the constant extension.
        assert!((y[30] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn extension_values_are_exact() {
        let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0), (-1.0, 0.5)]).unwrap();
        let grid = TimeGrid::new(1.0, 0.5, 10, 5).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 200, 2, None).unwrap();
        let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 2.0);
        problem.extension = 0.5;
        problem.eta = ExtensionSpec::Affine { intercept: 2.0, slope: -1.0 };
        problem.vartheta = crate::problem::ZExtensionSpec::Constant { values: vec![0.3, -0.1] };
        problem.phi = Some(DelaySpec::Constant { delta: 0.5 });
        problem.psi = Some(DelaySpec::Constant { delta: 0.3 });
        problem.f = GeneratorSpec::new(
            GeneratorFamily::AnticipatedAffine { constant: 0.0, y: 0.1, z: vec![], y_future: 0.2, z_future: vec![0.1] },
            0.1,
        );
        let (state, _) = solve(&problem, &bundle, &basis, direct(false)).unwrap();
        let sol = &state.scenarios[0];
        for k in 10..16 {
            let eta = 2.0 - (grid.time(k) - 1.0);
            assert!(sol.y.row(k).iter().all(|&v| v == eta));
            assert!(sol.z[0].row(k).iter().all(|&v| v == 0.3));
            assert!(sol.z[1].row(k).iter().all(|&v| v == -0.1));
        }
    }

    #[test]
    fn picard_on_constant_generators_stops_after_two_iterations() {
        let (bundle, basis) = deterministic(10, 0.0, 0);
        let mut problem = ProblemSpec::constant_terminal(bundle.spec.clone(), 1.0, 1.0);
        problem.f = GeneratorSpec::new(GeneratorFamily::Constant { value: 0.5 }, 0.0);
        let opts = SolveOptions {
            mode: SolveMode::Picard { tol: 1e-12, max_iters: 20 },
            ..direct(false)
        };
        let (state, diag) = solve(&problem, &bundle, &basis, opts).unwrap();
        assert_eq!(diag.picard_iterations, 2);
        assert_eq!(*diag.distances.last().unwrap(), 0.0);
        assert_eq!(diag.distance_ratios, vec![0.0]);
        assert!((state.mean_y(0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn picard_map_fixes_the_direct_solution() {
        let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0)]).unwrap();
        let grid = TimeGrid::new(1.0, 0.25, 8, 2).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 2, 2000, 9, None).unwrap();
        let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
        problem.extension = 0.25;
        problem.xi = TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 };
        problem.eta = ExtensionSpec::Terminal;
        problem.phi = Some(DelaySpec::Constant { delta: 0.25 });
        problem.f = GeneratorSpec::new(
            GeneratorFamily::AnticipatedAffine { constant: 0.0, y: 0.0, z: vec![0.2], y_future: 0.3, z_future: vec![] },
            0.13,
        );
        let opts = SolveOptions { inner_sweeps: 1, ..direct(false) };
        let (exact, diag) = solve(&problem, &bundle, &basis, opts).unwrap();
        let (image, _) = picard_phi(&problem, &bundle, &basis, &exact, opts).unwrap();
        let d = beta_distance(&image, &exact, &grid, diag.beta).unwrap();
        assert!(d < 1e-10, "distance {d}");
    }

    #[test]
    fn beta_norm_of_unit_difference() {
        let (beta, horizon) = (0.7_f64, 1.5_f64);
        let exact = ((beta * horizon).exp_m1() / beta).sqrt();
        let mut prev = f64::INFINITY;
        for n in [100, 200, 400] {
            let (bundle, basis) = deterministic(n, 0.5, n / 2);
            let problem = {
                let mut p = ProblemSpec::constant_terminal(bundle.spec.clone(), 1.0, 1.0);
                p.extension = 0.5;
                p
            };
            let zero = SolverState::extension_padded_zero(&problem, &bundle, &basis).unwrap();
            let mut one = zero.clone();
            one.scenarios.iter_mut().for_each(|s| s.y.fill(1.0));
            let mut zero_all = zero.clone();
            zero_all.scenarios.iter_mut().for_each(|s| s.y.fill(0.0));
            let d = beta_distance(&one, &zero_all, &bundle.grid, beta).unwrap();
            assert!((d - exact).abs() < prev);
            prev = (d - exact).abs();
            let mut two = one.clone();
            two.scenarios.iter_mut().for_each(|s| s.y.fill(2.0));
            let d2 = beta_distance(&two, &zero_all, &bundle.grid, beta).unwrap();
            assert!((d2 - 2.0 * d).abs() < 1e-12);
            assert_eq!(beta_distance(&one, &one, &bundle.grid, beta).unwrap(), 0.0);
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn ito_identity_cases() {
        let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0)]).unwrap();
        let grid = TimeGrid::main_only(1.0, 50).unwrap();
        let (bundle, _) = simulate_with_basis(&spec, &grid, 2, 50, 4, None).unwrap();
        let zero = ito_residual(0.0, Integrand::Zero, Integrand::Zero, &[], &bundle).unwrap();
        assert!(zero.iter().all(|&r| r == 0.0));
        let jumps = ito_residual(0.0, Integrand::Zero, Integrand::Zero, &[Integrand::Constant { value: 1.0 }], &bundle).unwrap();
        assert!(jumps.iter().all(|&r| r < 1e-12));
        // α = α₀ + t: the left Riemann sum of 2∫α dt misses exactly Σ Δt².
        let drift = ito_residual(1.0, Integrand::Constant { value: 1.0 }, Integrand::Zero, &[], &bundle).unwrap();
        assert!(drift.iter().all(|&r| (r - 1.0 / 50.0).abs() < 1e-12));
    }

    #[test]
    fn representation_of_constants_and_levy_terminal() {
        let spec = LevySpec::pure_jump(0.3, &[(1.0, 1.0)]).unwrap();
        let grid = TimeGrid::main_only(1.0, 10).unwrap();
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, 3000, 8, None).unwrap();
        let regression = RegressionBasis::polynomial(2);
        let r = representation_residual(TerminalSpec::Constant { value: 4.0 }, &bundle, &basis, regression).unwrap();
        assert!(r < 1e-10);
        let r = representation_residual(TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 }, &bundle, &basis, regression)
            .unwrap();
        assert!(r < 0.05, "residual {r}");
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0), (-0.5, 2.0)]).unwrap();
        let grid = TimeGrid::main_only(1.0, 10).unwrap();
        let mut problem = ProblemSpec::constant_terminal(spec.clone(), 1.0, 0.0);
        problem.xi = TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 };
        problem.eta = ExtensionSpec::Terminal;
        problem.barrier = BarrierSpec::Constant { value: -0.2 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let (bundle, basis) = simulate_with_basis(&spec, &grid, 3, 200, 77, None).unwrap();
                solve(&problem, &bundle, &basis, direct(true)).unwrap().0
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn mismatched_states_are_rejected() {
        let (a, _) = deterministic(10, 0.0, 0);
        let (b, basis) = deterministic(12, 0.0, 0);
        let p = ProblemSpec::constant_terminal(a.spec.clone(), 1.0, 1.0);
        let sa = SolverState::extension_padded_zero(&p, &a, &basis).unwrap();
        let sb = SolverState::extension_padded_zero(&p, &b, &basis).unwrap();
        assert!(matches!(beta_distance(&sa, &sb, &a.grid, 1.0), Err(Error::Dimension { .. })));
    }
}
