// Anticipated equation with a Brownian term and jump-driven terminal value.

use teugels_bdsde::problem::{DelaySpec, ExtensionSpec, GeneratorFamily, GeneratorSpec, ProblemSpec, TerminalSpec};
use teugels_bdsde::{simulate_with_basis, solve, LevySpec, Result, SolveOptions, TimeGrid};

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0), (-1.0, 0.5)])?;
    let grid = TimeGrid::with_matched_extension(1.0, 0.2, 20)?;
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 4, 2000, 11, None)?;
    let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
    problem.extension = 0.2;
    problem.xi = TerminalSpec::LinearLevy { intercept: 1.0, slope: 0.5 };
    problem.eta = ExtensionSpec::Terminal;
    problem.phi = Some(DelaySpec::Constant { delta: 0.2 });
    problem.f = GeneratorSpec::new(
        GeneratorFamily::AnticipatedAffine { constant: 0.1, y: -0.2, z: vec![0.1], y_future: 0.3, z_future: vec![] },
        0.14,
    );
    problem.g = GeneratorSpec::new(GeneratorFamily::Affine { constant: 0.0, y: 0.1, z: vec![0.2] }, 0.1).with_alphas(0.1, 0.0);
    let (state, diag) = solve(&problem, &bundle, &basis, SolveOptions::default())?;
    println!("Y_0 = {:.5} +/- {:.5}", state.mean_y(0), diag.y0_std_error);
    for k in (0..=grid.terminal_index()).step_by(5) {
        println!("t = {:.2}: E[Y] = {:.5}, E[Z1] = {:.5}, E[Z2] = {:.5}", grid.time(k), state.mean_y(k), state.mean_z(1, k), state.mean_z(2, k));
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
