// Lower barrier on a jump-driven solution: pushes, Skorokhod residual and the no-barrier limit.

use teugels_bdsde::problem::{BarrierSpec, ExtensionSpec, GeneratorFamily, GeneratorSpec, ProblemSpec, TerminalSpec};
use teugels_bdsde::{simulate_with_basis, solve, LevySpec, Result, SolveOptions, TimeGrid};

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 1.0), (-1.0, 1.0)])?;
    let grid = TimeGrid::main_only(1.0, 20)?;
    let (bundle, basis) = simulate_with_basis(&spec, &grid, 2, 3000, 5, None)?;
    let mut problem = ProblemSpec::constant_terminal(spec, 1.0, 0.0);
    problem.xi = TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 };
    problem.eta = ExtensionSpec::Terminal;
    problem.f = GeneratorSpec::new(GeneratorFamily::Constant { value: -0.5 }, 0.0);
    for barrier in [BarrierSpec::None, BarrierSpec::Constant { value: -0.5 }, BarrierSpec::AffineLevy { intercept: -0.2, slope: 1.0 }] {
        problem.barrier = barrier;
        let (state, diag) = solve(&problem, &bundle, &basis, SolveOptions::default())?;
        println!(
            "{barrier:?}: Y_0 = {:.5}, E[K_T] = {:.5}, largest push {:.4}, Skorokhod residual {}",
            state.mean_y(0),
            state.mean_k(20),
            diag.max_k_increment,
            diag.skorokhod_residual
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
