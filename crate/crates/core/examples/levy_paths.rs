// Simulate a two-atom driver and print per-node moments of `L` and `Y^(1)`.

use teugels_bdsde::levy::{sample_paths, LevySpec, TimeGrid};
use teugels_bdsde::Result;

pub fn run() -> Result<()> {
    let spec = LevySpec::pure_jump(0.1, &[(1.0, 2.0), (-0.5, 1.0)])?;
    let grid = TimeGrid::main_only(1.0, 5)?;
    let mut bundle = sample_paths(&spec, &grid, 2, 5000, 7)?;
    bundle.populate_compensated(1)?;
    println!("node  time   E[L]      E[L] exact  E[Y1]");
    for k in 0..grid.n_nodes() {
        let t = grid.time(k);
        let n = bundle.total_paths() as f64;
        let l: f64 = bundle.scenarios.iter().map(|s| s.levy.row(k).sum()).sum::<f64>() / n;
        let y: f64 = bundle.scenarios.iter().map(|s| s.ycomp[0].row(k).sum()).sum::<f64>() / n;
        println!("{k:>4}  {t:.2}  {l:+.5}  {:+.5}    {y:+.5}", t * spec.mean_power(1));
    }
    Ok(())
}

fn main() -> Result<()> {
    run()
}
