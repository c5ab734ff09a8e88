//! Finite-activity Lévy paths, their power-jump processes and compensations.
//!
//! The pure-jump process is `L_t = b t + l_t` where `l` is a compound Poisson
//! process whose jump measure is a finite list of atoms. Jump times are kept
//! exactly; node values are read off the event lists, so the power sums carry
//! no grid error. Each scenario owns one backward Brownian path shared by all
//! of its Lévy paths.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{path_stream, substream, BROWNIAN_SLOT};

/// One atom `(a_j, lambda_j)` of the jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub size: f64,
    pub intensity: f64,
}

impl Atom {
    pub fn new(size: f64, intensity: f64) -> Self {
        Self { size, intensity }
    }
}

/// Drift, Gaussian weight and finite jump measure of the driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySpec {
    #[serde(default)]
    pub drift: f64,
    /// Only enters the orthonormalization measure; simulation requires zero.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub atoms: Vec<Atom>,
}

impl LevySpec {
    pub fn new(drift: f64, sigma: f64, atoms: Vec<Atom>) -> Result<Self> {
        let spec = Self {
            drift,
            sigma,
            atoms,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Pure-jump spec with the given `(size, intensity)` atoms.
    pub fn pure_jump(drift: f64, atoms: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            drift,
            0.0,
            atoms.iter().map(|&(a, l)| Atom::new(a, l)).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !self.drift.is_finite() {
            return Err(Error::InvalidSpec("drift must be finite".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        for (idx, atom) in self.atoms.iter().enumerate() {
            if !atom.size.is_finite() || atom.size == 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "atom {idx}: jump size must be finite and nonzero, got {}",
                    atom.size
                )));
            }
            if !(atom.intensity.is_finite() && atom.intensity >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "atom {idx}: intensity must be finite and nonnegative, got {}",
                    atom.intensity
                )));
            }
            if self.atoms[..idx].iter().any(|a| a.size == atom.size) {
                return Err(Error::InvalidSpec(format!(
                    "atom {idx}: jump size {} appears twice",
                    atom.size
                )));
            }
        }
        Ok(())
    }

    pub fn total_intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.intensity).sum()
    }

    /// `∫ x^k ν(dx)` for the atom list.
    pub fn moment(&self, k: i32) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.intensity * a.size.powi(k))
            .sum()
    }

    /// `E[L^(i)_1]`: the drift enters only the first power.
    pub fn mean_power(&self, i: usize) -> f64 {
        let jumps = self.moment(i as i32);
        if i == 1 {
            self.drift + jumps
        } else {
            jumps
        }
    }
}

/// Uniform grid on `[0, T]` followed by a uniform grid on `[T, T + K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    extension: f64,
    n_main: usize,
    n_ext: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, extension: f64, n_main: usize, n_ext: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "horizon T must be positive, got {horizon}"
            )));
        }
        if !(extension.is_finite() && extension >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "extension K must be nonnegative, got {extension}"
            )));
        }
        if n_main == 0 {
            return Err(Error::InvalidSpec("main step count N must be at least 1".into()));
        }
        if extension > 0.0 && n_ext == 0 {
            return Err(Error::InvalidSpec(
                "extension K > 0 needs at least one extension step".into(),
            ));
        }
        if extension == 0.0 && n_ext != 0 {
            return Err(Error::InvalidSpec(
                "extension steps given for an empty extension window".into(),
            ));
        }
        let mut times = Vec::with_capacity(n_main + n_ext + 1);
        times.extend((0..=n_main).map(|k| horizon * k as f64 / n_main as f64));
        times.extend((1..=n_ext).map(|m| horizon + extension * m as f64 / n_ext as f64));
        Ok(Self {
            horizon,
            extension,
            n_main,
            n_ext,
            times,
        })
    }

    /// Grid without an extension window.
    pub fn main_only(horizon: f64, n_main: usize) -> Result<Self> {
        Self::new(horizon, 0.0, n_main, 0)
    }

    /// Extension grid whose step matches the main step as closely as possible.
    pub fn with_matched_extension(horizon: f64, extension: f64, n_main: usize) -> Result<Self> {
        let n_ext = if extension > 0.0 {
            ((extension * n_main as f64 / horizon).round() as usize).max(1)
        } else {
            0
        };
        Self::new(horizon, extension, n_main, n_ext)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn extension(&self) -> f64 {
        self.extension
    }

    /// Index of the node at `T`.
    pub fn terminal_index(&self) -> usize {
        self.n_main
    }

    pub fn n_main(&self) -> usize {
        self.n_main
    }

    pub fn n_ext(&self) -> usize {
        self.n_ext
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Length of step `k`, i.e. `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Step length on `[0, T]`.
    pub fn main_dt(&self) -> f64 {
        self.horizon / self.n_main as f64
    }

    /// Nearest node to `t`, clamped to the grid.
    pub fn nearest_node(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            return 0;
        }
        if idx >= self.times.len() {
            return self.times.len() - 1;
        }
        if t - self.times[idx - 1] <= self.times[idx] - t {
            idx - 1
        } else {
            idx
        }
    }
}

/// A single jump of a Lévy path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// All Lévy paths driven by one Brownian scenario.
///
/// Matrices are node-major: row `k` holds the value at `t_k` for every path.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Brownian increments `B_{t_{k+1}} - B_{t_k}` over every grid step.
    pub db: Vec<f64>,
    /// Jump events per path, in time order.
    pub jumps: Vec<Vec<Jump>>,
    /// `L_{t_k}` per path.
    pub levy: Array2<f64>,
    /// Number of jumps up to `t_k` per path.
    pub jump_count: Array2<u32>,
    /// Compensated power-jump values `Y^(i)`, `ycomp[i - 1]`.
    pub ycomp: Vec<Array2<f64>>,
    /// Teugels increments `H^(i)_{t_{k+1}} - H^(i)_{t_k}`, `dh[i - 1]`, step-major.
    pub dh: Vec<Array2<f64>>,
}

impl Scenario {
    pub fn n_paths(&self) -> usize {
        self.jumps.len()
    }
}

/// Simulated Brownian scenarios with their Lévy paths.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub spec: LevySpec,
    pub grid: TimeGrid,
    pub seed: u64,
    pub n_paths: usize,
    pub scenarios: Vec<Scenario>,
}

impl PathBundle {
    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn total_paths(&self) -> usize {
        self.n_paths * self.scenarios.len()
    }

    /// Highest order for which compensated processes are stored.
    pub fn compensated_order(&self) -> usize {
        self.scenarios.first().map_or(0, |s| s.ycomp.len())
    }

    /// Number of Teugels martingales whose increments are stored.
    pub fn teugels_order(&self) -> usize {
        self.scenarios.first().map_or(0, |s| s.dh.len())
    }

    /// Stores `Y^(1) … Y^(order)` in every scenario.
    pub fn populate_compensated(&mut self, order: usize) -> Result<()> {
        let mut per_order = Vec::with_capacity(order);
        for i in 1..=order {
            per_order.push(compensate(self, &self.spec, i)?);
        }
        for s in self.scenarios.iter_mut() {
            s.ycomp.clear();
        }
        for values in per_order {
            for (s, v) in self.scenarios.iter_mut().zip(values) {
                s.ycomp.push(v);
            }
        }
        Ok(())
    }

    /// Columnar `node,path,L` dump used by `--debug`.
    pub fn write_levy_dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "node,path,L")?;
        for (s_idx, s) in self.scenarios.iter().enumerate() {
            for k in 0..self.grid.n_nodes() {
                for j in 0..s.n_paths() {
                    writeln!(
                        out,
                        "{},{},{:.16e}",
                        k,
                        s_idx * self.n_paths + j,
                        s.levy[[k, j]]
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn jump_events<R: Rng>(spec: &LevySpec, end: f64, rng: &mut R) -> Vec<Jump> {
    let total = spec.total_intensity();
    if total <= 0.0 {
        return Vec::new();
    }
    let waiting = Exp::new(total).expect("positive total intensity");
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        t += waiting.sample(rng);
        if t > end {
            break;
        }
        // Pick atom j with probability lambda_j / sum(lambda).
        let mut u = rng.random::<f64>() * total;
        let mut size = spec.atoms.last().map(|a| a.size).unwrap_or(0.0);
        for atom in &spec.atoms {
            if u < atom.intensity {
                size = atom.size;
                break;
            }
            u -= atom.intensity;
        }
        events.push(Jump { time: t, size });
    }
    events
}

/// Simulates `n_scenarios` Brownian paths and `n_paths` Lévy paths per scenario.
///
/// The output depends only on `(spec, grid, seed)` and the counts, never on the
/// number of worker threads.
pub fn sample_paths(
    spec: &LevySpec,
    grid: &TimeGrid,
    n_scenarios: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    spec.validate()?;
    if spec.sigma > 0.0 {
        return Err(Error::UnsupportedSimulation(spec.sigma));
    }
    if n_scenarios == 0 || n_paths == 0 {
        return Err(Error::InvalidSpec(
            "need at least one scenario and one path per scenario".into(),
        ));
    }
    let end = grid.time(grid.n_nodes() - 1);
    let n_nodes = grid.n_nodes();

    let scenarios = (0..n_scenarios)
        .into_par_iter()
        .map(|s| {
            let mut brownian = substream(seed, s as u64, BROWNIAN_SLOT);
            let db: Vec<f64> = (0..grid.n_steps())
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut brownian);
                    z * grid.dt(k).sqrt()
                })
                .collect();

            let jumps: Vec<Vec<Jump>> = (0..n_paths)
                .into_par_iter()
                .map(|j| jump_events(spec, end, &mut path_stream(seed, s, j)))
                .collect();

            let mut levy = Array2::<f64>::zeros((n_nodes, n_paths));
            let mut jump_count = Array2::<u32>::zeros((n_nodes, n_paths));
            for (j, events) in jumps.iter().enumerate() {
                let mut sum = 0.0;
                let mut next = 0;
                for k in 0..n_nodes {
                    let t = grid.time(k);
                    while next < events.len() && events[next].time <= t {
                        sum += events[next].size;
                        next += 1;
                    }
                    levy[[k, j]] = spec.drift * t + sum;
                    jump_count[[k, j]] = next as u32;
                }
            }
            Scenario {
                db,
                jumps,
                levy,
                jump_count,
                ycomp: Vec::new(),
                dh: Vec::new(),
            }
        })
        .collect();

    Ok(PathBundle {
        spec: spec.clone(),
        grid: grid.clone(),
        seed,
        n_paths,
        scenarios,
    })
}

/// Power-jump process `L^(i)` at every node, one node-major matrix per scenario.
///
/// `L^(1)` is `L` itself, drift included; for `i >= 2` it is the running sum of
/// the `i`-th powers of the jump sizes.
pub fn power_jump(bundle: &PathBundle, i: usize) -> Result<Vec<Array2<f64>>> {
    if i == 0 {
        return Err(Error::InvalidOrder(i));
    }
    if i == 1 {
        return Ok(bundle.scenarios.iter().map(|s| s.levy.clone()).collect());
    }
    let grid = &bundle.grid;
    Ok(bundle
        .scenarios
        .par_iter()
        .map(|s| {
            let mut out = Array2::<f64>::zeros((grid.n_nodes(), s.n_paths()));
            for (j, events) in s.jumps.iter().enumerate() {
                let mut sum = 0.0;
                let mut next = 0;
                for k in 0..grid.n_nodes() {
                    let t = grid.time(k);
                    while next < events.len() && events[next].time <= t {
                        sum += events[next].size.powi(i as i32);
                        next += 1;
                    }
                    out[[k, j]] = sum;
                }
            }
            out
        })
        .collect())
}

/// Compensated power-jump process `Y^(i)_t = L^(i)_t - t E[L^(i)_1]`.
pub fn compensate(bundle: &PathBundle, spec: &LevySpec, i: usize) -> Result<Vec<Array2<f64>>> {
    let mut values = power_jump(bundle, i)?;
    let mean = spec.mean_power(i);
    for m in values.iter_mut() {
        for (k, mut row) in m.rows_mut().into_iter().enumerate() {
            let shift = bundle.grid.time(k) * mean;
            row.mapv_inplace(|v| v - shift);
        }
    }
    Ok(values)
}
