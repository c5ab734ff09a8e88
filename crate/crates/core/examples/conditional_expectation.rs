// Regression estimate of `E[L_T^2 | L_t]` against its closed form.

use teugels_bdsde::levy::{sample_paths, LevySpec, TimeGrid};
use teugels_bdsde::{cond_expect, RegressionBasis, Result};

pub fn run() -> Result<()> {
    let lambda = 2.0;
    let spec = LevySpec::pure_jump(0.0, &[(1.0, lambda)])?;
    let grid = TimeGrid::main_only(1.0, 10)?;
    let bundle = sample_paths(&spec, &grid, 1, 20_000, 3)?;
    let s = &bundle.scenarios[0];
    let target: Vec<f64> = s.levy.row(10).iter().map(|v| v * v).collect();
    for k in [2, 5, 8] {
        let fitted = cond_expect(&bundle, 0, k, &target, &RegressionBasis::polynomial(2))?;
        let tau = lambda * (1.0 - grid.time(k));
        // L_T = L_t + Poisson(tau): E[L_T^2 | L_t] = (L_t + tau)^2 + tau.
        let rms = (s.levy.row(k).iter().zip(&fitted).map(|(l, f)| (f - ((l + tau).powi(2) + tau)).powi(2)).sum::<f64>()
            / fitted.len() as f64)
            .sqrt();
        println!("t = {:.1}: rms deviation from closed form {rms:.4}", grid.time(k));
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
