// Reconstruct terminal values from `Y_0` and the Teugels integrals.

use teugels_bdsde::problem::TerminalSpec;
use teugels_bdsde::solver::representation_residual;
use teugels_bdsde::{simulate_with_basis, LevySpec, RegressionBasis, Result, TimeGrid};

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.2, &[(1.0, 1.0)])?;
    let grid = TimeGrid::main_only(1.0, 10)?;
    for paths in [1000, 4000, 16_000] {
        let (bundle, basis) = simulate_with_basis(&spec, &grid, 1, paths, 17, None)?;
        for (name, xi) in [
            ("constant", TerminalSpec::Constant { value: 2.0 }),
            ("Y1_T", TerminalSpec::LinearCompensated { intercept: 0.0, slope: 1.0 }),
            ("L_T", TerminalSpec::LinearLevy { intercept: 0.0, slope: 1.0 }),
        ] {
            let r = representation_residual(xi, &bundle, &basis, RegressionBasis::polynomial(2))?;
            println!("{paths:>6} paths, xi = {name:<8}: rms residual {r:.4}");
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
