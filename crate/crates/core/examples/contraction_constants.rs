// Delay constants and the Picard contraction estimate for a few generator pairs.

use teugels_bdsde::problem::{contraction_constants, DelaySpec, GeneratorFamily, GeneratorSpec};
use teugels_bdsde::Result;

pub fn run() -> Result<()> {
    let delay = DelaySpec::Affine { rho: 0.2, delta0: 0.1 };
    let m = delay.change_of_variables_constant()?;
    println!("affine delay: M = {m:.4}, needs K >= {:.3} for T = 1", delay.required_extension(1.0));
    for (c, a1, a2) in [(0.1, 0.1, 0.1), (0.3, 0.2, 0.2), (0.5, 0.2, 0.25)] {
        let f = GeneratorSpec::new(GeneratorFamily::Zero, c);
        let g = GeneratorSpec::new(GeneratorFamily::Zero, c).with_alphas(a1, a2);
        let k = contraction_constants(&f, &g, m);
        println!(
            "c = {c}, alpha = ({a1}, {a2}): c_hat = {:.4} (inf {:.4}), beta = {:.4}, feasible {}",
            k.c_hat, k.c_hat_infimum, k.beta, k.feasible
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
