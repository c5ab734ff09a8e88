//! Reflected anticipated backward doubly stochastic differential equations
//! driven by the Teugels martingales of a finite-activity Lévy process,
//! solved by least-squares Monte Carlo.

pub mod commands;
pub mod config;
pub mod error;
pub mod levy;
pub mod lsmc;
pub mod oracles;
pub mod problem;
pub mod rng;
pub mod solver;
pub mod teugels;
pub mod verify;

pub use config::RunConfig;
pub use error::{Assumption, Error, Result};
pub use levy::{sample_paths, Atom, LevySpec, PathBundle, TimeGrid};
pub use lsmc::{cond_expect, regress, RegressionBasis};
pub use problem::{
    BarrierSpec, DelaySpec, ExtensionSpec, GeneratorFamily, GeneratorSpec, ProblemSpec,
    TerminalSpec, ZExtensionSpec,
};
pub use solver::{solve, Diagnostics, SolveMode, SolveOptions, SolverState};
pub use teugels::{attach_teugels, build_basis, max_order, simulate_with_basis, TeugelsBasis};
