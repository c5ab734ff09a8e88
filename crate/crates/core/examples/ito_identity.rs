// Squared-value identity: first-order defect for a drift, exact for pure jumps.

use teugels_bdsde::solver::{ito_residual, Integrand};
use teugels_bdsde::{simulate_with_basis, LevySpec, Result, TimeGrid};

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.0, &[(1.0, 2.0)])?;
    for n in [50, 100, 200, 400] {
        let grid = TimeGrid::main_only(1.0, n)?;
        let (bundle, _) = simulate_with_basis(&spec, &grid, 1, 100, 9, None)?;
        let drift = ito_residual(1.0, Integrand::Affine { intercept: 1.0, slope: 2.0 }, Integrand::Zero, &[], &bundle)?;
        let jumps = ito_residual(0.0, Integrand::Zero, Integrand::Zero, &[Integrand::Constant { value: 1.0 }], &bundle)?;
        let brownian = ito_residual(0.0, Integrand::Zero, Integrand::Constant { value: 1.0 }, &[], &bundle)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "N = {n:>3}: drift {:.3e}, pure jump {:.1e}, brownian {:.3e}",
            mean(&drift),
            jumps.iter().cloned().fold(0.0, f64::max),
            mean(&brownian)
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
