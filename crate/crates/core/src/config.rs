//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! T = 1.0
//! K_ext = 0.0
//! levy = { drift = 0.0, atoms = [{ size = 1.0, intensity = 1.0 }] }
//! f = { family = { kind = "affine", y = 1.0 }, lipschitz_c = 1.0 }
//! xi = { kind = "constant", value = 1.0 }
//! eta = { kind = "constant", value = 1.0 }
//!
//! [numerics]
//! N = 100
//! n_paths = 1000
//! basis_order = "auto"
//!
//! [rng]
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::TimeGrid;
use crate::lsmc::RegressionBasis;
use crate::problem::ProblemSpec;
use crate::solver::{SolveMode, SolveOptions};
use crate::teugels::max_order;

/// A numeric setting that may be left to the library.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AutoRaw<T>", into = "AutoRaw<T>")]
#[serde(bound(deserialize = "T: Deserialize<'de> + Copy", serialize = "T: Serialize + Copy"))]
pub enum Auto<T> {
    Auto,
    Value(T),
}

impl<T> Default for Auto<T> {
    fn default() -> Self {
        Auto::Auto
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AutoRaw<T> {
    Value(T),
    Keyword(String),
}

impl<T> TryFrom<AutoRaw<T>> for Auto<T> {
    type Error = String;

    fn try_from(raw: AutoRaw<T>) -> std::result::Result<Self, String> {
        match raw {
            AutoRaw::Value(v) => Ok(Auto::Value(v)),
            AutoRaw::Keyword(k) if k == "auto" => Ok(Auto::Auto),
            AutoRaw::Keyword(k) => Err(format!("expected a number or \"auto\", got \"{k}\"")),
        }
    }
}

impl<T> From<Auto<T>> for AutoRaw<T> {
    fn from(a: Auto<T>) -> Self {
        match a {
            Auto::Auto => AutoRaw::Keyword("auto".into()),
            Auto::Value(v) => AutoRaw::Value(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Direct,
    Picard,
}

fn default_paths() -> usize {
    1000
}
fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn default_tol() -> f64 {
    1e-8
}
fn default_iters() -> usize {
    20
}
fn default_levels() -> Vec<usize> {
    vec![50, 100, 200]
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(rename = "N")]
    pub n: usize,
    /// Steps on the extension window; defaults to the main step size.
    #[serde(rename = "N_ext", default)]
    pub n_ext: Option<usize>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "one")]
    pub n_b_scenarios: usize,
    #[serde(default)]
    pub basis_order: Auto<usize>,
    #[serde(default = "two")]
    pub regression_degree: usize,
    #[serde(default)]
    pub jump_buckets: usize,
    #[serde(default = "three")]
    pub inner_sweeps: usize,
    #[serde(default = "yes")]
    pub reflect: bool,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_iters")]
    pub picard_max_iters: usize,
    #[serde(default)]
    pub beta: Auto<f64>,
    /// Grid sizes of the `convergence` command.
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RngConfig {
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "one")]
    pub verbosity: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            verbosity: 1,
        }
    }
}

/// Case selection of the `verify` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Case names; absent means the whole suite.
    #[serde(default)]
    pub cases: Option<Vec<String>>,
    #[serde(default)]
    pub tolerance_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub numerics: Numerics,
    #[serde(default)]
    pub rng: RngConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

/// A validated configuration with its derived objects.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub grid: TimeGrid,
    pub order: usize,
    pub options: SolveOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Grid for `N` main steps, with the extension step matched to `T / N`
    /// unless `N_ext` is given.
    pub fn grid_with(&self, n: usize) -> Result<TimeGrid> {
        let p = &self.problem;
        match self.numerics.n_ext {
            Some(n_ext) => TimeGrid::new(p.horizon, p.extension, n, n_ext),
            None => TimeGrid::with_matched_extension(p.horizon, p.extension, n),
        }
    }

    /// Runs every structural check before anything is simulated.
    pub fn prepare(self) -> Result<Prepared> {
        let nm = &self.numerics;
        self.problem.validate()?;
        if nm.n_paths == 0 || nm.n_b_scenarios == 0 {
            return Err(Error::Config("n_paths and n_b_scenarios must be positive".into()));
        }
        let basis = RegressionBasis {
            degree: nm.regression_degree,
            jump_buckets: nm.jump_buckets,
        };
        if nm.n_paths < basis.n_functions() {
            return Err(Error::Config(format!(
                "n_paths = {} cannot determine {} regression functions",
                nm.n_paths,
                basis.n_functions()
            )));
        }
        if nm.inner_sweeps == 0 {
            return Err(Error::Config("inner_sweeps must be at least 1".into()));
        }
        if !(nm.picard_tol.is_finite() && nm.picard_tol >= 0.0) || nm.picard_max_iters == 0 {
            return Err(Error::Config("picard_tol must be nonnegative and picard_max_iters positive".into()));
        }
        if let Auto::Value(b) = nm.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Config(format!("beta must be finite and nonnegative, got {b}")));
            }
        }
        let grid = self.grid_with(nm.n)?;
        self.problem.check_barrier_on_grid(&grid)?;
        let max = max_order(&self.problem.levy);
        let order = match nm.basis_order {
            Auto::Auto => max,
            Auto::Value(p) if p > max => return Err(Error::SingularGram { order: p, max }),
            Auto::Value(p) => p,
        };
        let options = SolveOptions {
            reflect: nm.reflect,
            mode: match nm.mode {
                ModeName::Direct => SolveMode::Direct,
                ModeName::Picard => SolveMode::Picard {
                    tol: nm.picard_tol,
                    max_iters: nm.picard_max_iters,
                },
            },
            regression: basis,
            inner_sweeps: nm.inner_sweeps,
            beta: match nm.beta {
                Auto::Auto => None,
                Auto::Value(b) => Some(b),
            },
            record_r2: false,
        };
        Ok(Prepared {
            config: self,
            grid,
            order,
            options,
        })
    }
}
