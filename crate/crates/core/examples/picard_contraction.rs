// Picard iteration of the frozen-coefficient map next to the direct sweep.

use teugels_bdsde::problem::{DelaySpec, ExtensionSpec, GeneratorFamily, GeneratorSpec, ProblemSpec, TerminalSpec};
use teugels_bdsde::solver::beta_distance;
use teugels_bdsde::{simulate_with_basis, solve, LevySpec, Result, SolveMode, SolveOptions, TimeGrid};

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0)])?;
    let grid = TimeGrid::with_matched_extension(1.0, 0.25, 20)?;
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 2, 2000, 4, None)?;
    let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
    problem.extension = 0.25;
    problem.xi = TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 };
    problem.eta = ExtensionSpec::Terminal;
    problem.phi = Some(DelaySpec::Constant { delta: 0.25 });
    problem.f = GeneratorSpec::new(
        GeneratorFamily::AnticipatedAffine { constant: 0.1, y: 0.15, z: vec![0.1], y_future: 0.15, z_future: vec![] },
        0.1,
    );
    problem.g = GeneratorSpec::new(GeneratorFamily::Affine { constant: 0.0, y: 0.1, z: vec![0.2] }, 0.1).with_alphas(0.1, 0.1);
    let direct_opts = SolveOptions { reflect: false, ..SolveOptions::default() };
    let (direct, _) = solve(&problem, &bundle, &basis, direct_opts)?;
    let opts = SolveOptions { mode: SolveMode::Picard { tol: 1e-10, max_iters: 15 }, ..direct_opts };
    let (fixed, diag) = solve(&problem, &bundle, &basis, opts)?;
    println!("c_hat = {:.4}, beta = {:.4}", diag.contraction.c_hat, diag.beta);
    for (i, d) in diag.distances.iter().enumerate() {
        println!("iterate {:>2}: distance {d:.3e}", i + 1);
    }
    println!("picard vs direct: {:.3e}", beta_distance(&fixed, &direct, &grid, diag.beta)?);
    Ok(())
}

fn main() -> Result<()> {
    run()
}
