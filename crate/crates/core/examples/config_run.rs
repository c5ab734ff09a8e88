// Drive a run from a TOML configuration, as the command line does.

use teugels_bdsde::commands::{cmd_convergence, cmd_solve};
use teugels_bdsde::{Result, RunConfig};

const CONFIG: &str = r#"
[problem]
T = 1.0
levy = { atoms = [{ size = 1.0, intensity = 1.0 }] }
f = { family = { kind = "affine", constant = 0.5, y = 1.0 }, lipschitz_c = 1.0 }
xi = { kind = "constant", value = 1.0 }
eta = { kind = "constant", value = 1.0 }

[numerics]
N = 50
n_paths = 200
levels = [25, 50, 100, 200]
"#;

pub fn run() -> Result<()> {
    let prepared = RunConfig::from_toml(CONFIG)?.prepare()?;
    let out = std::env::temp_dir().join("tbsde-config-run");
    let report = cmd_solve(&prepared, &out, false)?;
    print!("{}", report.summary);
    let (table, _) = cmd_convergence(&prepared, &prepared.config.numerics.levels, &out)?;
    for r in &table.rows {
        println!("N = {:>3}: error {:.3e}", r.n, r.abs_error);
    }
    println!("tables written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    run()
}
