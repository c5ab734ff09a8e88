//! Least-squares Monte-Carlo conditional expectations.
//!
//! Within one Brownian scenario the conditioning on `F_t` reduces to the Lévy
//! state, so `E^{F_{t_k}}[X]` is estimated by regressing `X` across the paths
//! of the scenario on polynomials in `L_{t_k}` (optionally with jump-count
//! indicators).
//!
//! The normal equations carry a ridge term `1e-8 · trace(XᵀX) / cols`. A few
//! rounds of iterated refinement remove the ridge bias on well-determined
//! directions and leave rank-deficient directions at zero, which yields the
//! minimal-norm least-squares solution.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::PathBundle;

const RIDGE: f64 = 1e-8;
const REFINEMENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    /// Polynomial degree in the state `L_{t_k}`.
    pub degree: usize,
    /// Indicators `1[N_t = m]` for `m = 1 … buckets - 1` and `1[N_t ≥ buckets]`.
    #[serde(default)]
    pub jump_buckets: usize,
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            degree,
            jump_buckets: 0,
        }
    }

    pub fn n_functions(&self) -> usize {
        self.degree + 1 + self.jump_buckets
    }
}

/// Fitted regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedFunction {
    shift: f64,
    scale: f64,
    /// Coefficients of `((x - shift) / scale)^m`.
    poly: Vec<f64>,
    buckets: Vec<f64>,
}

impl FittedFunction {
    fn constant(value: f64, basis: &RegressionBasis) -> Self {
        let mut poly = vec![0.0; basis.degree + 1];
        poly[0] = value;
        Self {
            shift: 0.0,
            scale: 1.0,
            poly,
            buckets: vec![0.0; basis.jump_buckets],
        }
    }

    pub fn eval(&self, state: f64) -> f64 {
        self.eval_with_count(state, 0)
    }

    pub fn eval_with_count(&self, state: f64, jumps: u32) -> f64 {
        let z = (state - self.shift) / self.scale;
        let mut v = self.poly.iter().rev().fold(0.0, |acc, &c| acc * z + c);
        if let Some(idx) = bucket_index(jumps, self.buckets.len()) {
            v += self.buckets[idx];
        }
        v
    }

    /// Coefficients of the polynomial part in the raw monomials `1, x, x², …`.
    pub fn coefficients(&self) -> Vec<f64> {
        let d = self.poly.len();
        let mut raw = vec![0.0; d];
        // (x - s)^m / scale^m expanded by the binomial theorem.
        for (m, &c) in self.poly.iter().enumerate() {
            let w = c / self.scale.powi(m as i32);
            let mut binom = 1.0;
            for r in 0..=m {
                raw[r] += w * binom * (-self.shift).powi((m - r) as i32);
                binom = binom * (m - r) as f64 / (r + 1) as f64;
            }
        }
        raw
    }

    /// Coefficients of the jump-count indicators.
    pub fn bucket_coefficients(&self) -> &[f64] {
        &self.buckets
    }
}

fn bucket_index(jumps: u32, buckets: usize) -> Option<usize> {
    if buckets == 0 || jumps == 0 {
        None
    } else {
        Some((jumps as usize).min(buckets) - 1)
    }
}

/// Least-squares projector for a fixed set of states, reusable across targets.
pub struct Projector<'a> {
    basis: RegressionBasis,
    states: &'a [f64],
    counts: Option<&'a [u32]>,
    kind: ProjectorKind,
}

enum ProjectorKind {
    /// All states coincide: the projection is the sample mean.
    Mean,
    Ridge {
        shift: f64,
        scale: f64,
        chol: Cholesky<f64, Dyn>,
    },
}

impl<'a> Projector<'a> {
    pub fn new(
        states: &'a [f64],
        counts: Option<&'a [u32]>,
        basis: &RegressionBasis,
    ) -> Result<Self> {
        let n = states.len();
        if n < basis.n_functions() {
            return Err(Error::Regression(format!(
                "{n} samples cannot determine {} basis functions",
                basis.n_functions()
            )));
        }
        if basis.jump_buckets > 0 {
            match counts {
                Some(c) if c.len() == n => {}
                _ => {
                    return Err(Error::Regression(
                        "jump-count features need one count per state".into(),
                    ))
                }
            }
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Regression("non-finite state".into()));
        }
        let first = states[0];
        let counts_flat = counts.is_none_or(|c| c.iter().all(|&v| v == c[0]));
        let kind = if states.iter().all(|&v| v == first) && counts_flat {
            ProjectorKind::Mean
        } else {
            let shift = states.iter().sum::<f64>() / n as f64;
            let var = states.iter().map(|v| (v - shift).powi(2)).sum::<f64>() / n as f64;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            let cols = basis.n_functions();
            let mut gram = DMatrix::<f64>::zeros(cols, cols);
            let mut row = vec![0.0; cols];
            for j in 0..n {
                fill_row(&mut row, states[j], counts.map(|c| c[j]), shift, scale, basis);
                for a in 0..cols {
                    for b in 0..=a {
                        gram[(a, b)] += row[a] * row[b];
                    }
                }
            }
            for a in 0..cols {
                for b in 0..a {
                    gram[(b, a)] = gram[(a, b)];
                }
            }
            let ridge = RIDGE * gram.trace() / cols as f64;
            for a in 0..cols {
                gram[(a, a)] += ridge;
            }
            let chol = gram.cholesky().ok_or_else(|| {
                Error::Regression("design is degenerate after ridge regularization".into())
            })?;
            ProjectorKind::Ridge { shift, scale, chol }
        };
        Ok(Self {
            basis: *basis,
            states,
            counts,
            kind,
        })
    }

    pub fn fit(&self, targets: &[f64]) -> Result<FittedFunction> {
        let n = self.states.len();
        if targets.len() != n {
            return Err(Error::Dimension {
                what: "regression targets",
                expected: n,
                found: targets.len(),
            });
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Regression("non-finite target".into()));
        }
        if targets.iter().all(|&v| v == targets[0]) {
            return Ok(FittedFunction::constant(targets[0], &self.basis));
        }
        match &self.kind {
            ProjectorKind::Mean => {
                let mean = targets.iter().sum::<f64>() / n as f64;
                Ok(FittedFunction::constant(mean, &self.basis))
            }
            ProjectorKind::Ridge { shift, scale, chol } => {
                let cols = self.basis.n_functions();
                let mut theta = DVector::<f64>::zeros(cols);
                let mut residual = targets.to_vec();
                let mut row = vec![0.0; cols];
                for _ in 0..=REFINEMENTS {
                    let mut rhs = DVector::<f64>::zeros(cols);
                    for j in 0..n {
                        fill_row(&mut row, self.states[j], self.counts.map(|c| c[j]), *shift, *scale, &self.basis);
                        for a in 0..cols {
                            rhs[a] += row[a] * residual[j];
                        }
                    }
                    theta += chol.solve(&rhs);
                    for j in 0..n {
                        fill_row(&mut row, self.states[j], self.counts.map(|c| c[j]), *shift, *scale, &self.basis);
                        let fitted: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
                        residual[j] = targets[j] - fitted;
                    }
                }
                let d = self.basis.degree + 1;
                Ok(FittedFunction {
                    shift: *shift,
                    scale: *scale,
                    poly: theta.iter().take(d).copied().collect(),
                    buckets: theta.iter().skip(d).copied().collect(),
                })
            }
        }
    }

    /// Fitted values at the projector's own states.
    pub fn project(&self, targets: &[f64]) -> Result<Vec<f64>> {
        let f = self.fit(targets)?;
        if targets.iter().all(|&v| v == targets[0]) {
            return Ok(targets.to_vec());
        }
        Ok(match self.counts {
            Some(c) => self
                .states
                .iter()
                .zip(c)
                .map(|(&x, &m)| f.eval_with_count(x, m))
                .collect(),
            None => self.states.iter().map(|&x| f.eval(x)).collect(),
        })
    }
}

fn fill_row(
    row: &mut [f64],
    state: f64,
    count: Option<u32>,
    shift: f64,
    scale: f64,
    basis: &RegressionBasis,
) {
    let z = (state - shift) / scale;
    let mut p = 1.0;
    for slot in row.iter_mut().take(basis.degree + 1) {
        *slot = p;
        p *= z;
    }
    let tail = &mut row[basis.degree + 1..];
    tail.iter_mut().for_each(|v| *v = 0.0);
    if let Some(idx) = count.and_then(|m| bucket_index(m, basis.jump_buckets)) {
        tail[idx] = 1.0;
    }
}

/// Least-squares fit of `targets` on polynomials of `states`.
pub fn regress(states: &[f64], targets: &[f64], basis: &RegressionBasis) -> Result<FittedFunction> {
    if states.len() != targets.len() {
        return Err(Error::Dimension {
            what: "regression targets",
            expected: states.len(),
            found: targets.len(),
        });
    }
    Projector::new(states, None, basis)?.fit(targets)
}

/// Regression estimate of `E^{F_{t_k}}[targets]` for the paths of one scenario.
pub fn cond_expect(
    bundle: &PathBundle,
    scenario: usize,
    k: usize,
    targets: &[f64],
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    let s = bundle.scenarios.get(scenario).ok_or(Error::Dimension {
        what: "scenario index",
        expected: bundle.n_scenarios(),
        found: scenario,
    })?;
    let states = s.levy.row(k);
    let states = states.as_slice().expect("node-major rows are contiguous");
    let counts = s.jump_count.row(k);
    let counts = counts.as_slice().expect("node-major rows are contiguous");
    let projector = Projector::new(states, Some(counts), basis)?;
    projector.project(targets)
}

/// Coefficient of determination of a fit.
pub fn r_squared(targets: &[f64], fitted: &[f64]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sst: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if sst == 0.0 {
        return 1.0;
    }
    let ssr: f64 = targets.iter().zip(fitted).map(|(t, f)| (t - f).powi(2)).sum();
    1.0 - ssr / sst
}
