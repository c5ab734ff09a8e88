// Orthonormalization coefficients for an asymmetric three-atom measure.

use teugels_bdsde::{build_basis, max_order, LevySpec, Result};

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.0, &[(0.5, 2.0), (-1.2, 0.7), (2.0, 0.4)])?;
    let p = max_order(&spec);
    let basis = build_basis(&spec, p)?;
    println!("order {p}, max |CGC^T - I| = {:.2e}", basis.orthonormality_defect());
    print!("{}", basis.to_csv());
    if let Err(e) = build_basis(&spec, p + 1) {
        println!("order {}: {e}", p + 1);
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
