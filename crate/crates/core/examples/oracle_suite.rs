// Run the solver-versus-oracle suite and print the comparison table.

use teugels_bdsde::verify::{run_suite, Selection};
use teugels_bdsde::Result;

pub fn run() -> Result<()> {
    let report = run_suite(&Selection::All, 1.0)?;
    print!("{}", report.to_csv());
    println!("{} failures", report.failures());
    Ok(())
}

fn main() -> Result<()> {
    run()
}
