//! Teugels martingales of a finite-atom Lévy measure.
//!
//! The coefficients `c_{i,k}` orthonormalize the monomials `1, x, x², …` in
//! `L²(μ)` with `μ(dx) = x² ν(dx) + σ² δ₀(dx)`. With Gram matrix
//! `G_{ij} = ∫ x^{i-1} x^{j-1} μ(dx)` and Cholesky factor `G = L Lᵀ`, the
//! coefficient matrix is `C = L⁻¹`, so `C G Cᵀ = I` and `c_{i,i} > 0`.
//!
//! A measure with `n` atoms (plus one more dimension when `σ > 0`) spans an
//! `n`-dimensional `L²(μ)`, so the chaos expansion in `H^(1) … H^(n)` is exact.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy::{LevySpec, PathBundle};

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct TeugelsBasis {
    order: usize,
    /// `m_k = ∫ x^k ν(dx)` for `k = 2 … 2p`, stored at index `k - 2`.
    moments: Vec<f64>,
    gram: DMatrix<f64>,
    coeffs: DMatrix<f64>,
}

impl TeugelsBasis {
    /// Order-zero basis for drivers without jumps.
    pub fn empty() -> Self {
        Self {
            order: 0,
            moments: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            coeffs: DMatrix::zeros(0, 0),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `m_k` for `2 <= k <= 2p`.
    pub fn moment(&self, k: usize) -> f64 {
        self.moments[k - 2]
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Lower-triangular coefficient matrix, row `i - 1` holds `c_{i,1} … c_{i,i}`.
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `c_{i,k}` with 1-based indices.
    pub fn c(&self, i: usize, k: usize) -> f64 {
        self.coeffs[(i - 1, k - 1)]
    }

    /// Largest absolute entry of `C G Cᵀ - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        let prod = &self.coeffs * &self.gram * self.coeffs.transpose();
        let id = DMatrix::<f64>::identity(self.order, self.order);
        (prod - id).amax()
    }

    /// CSV with the moments, the Gram matrix and the coefficients.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,i,j,value\n");
        for (idx, m) in self.moments.iter().enumerate() {
            out.push_str(&format!("moment,{},,{:.16e}\n", idx + 2, m));
        }
        for i in 0..self.order {
            for j in 0..self.order {
                out.push_str(&format!("gram,{},{},{:.16e}\n", i + 1, j + 1, self.gram[(i, j)]));
            }
        }
        for i in 0..self.order {
            for j in 0..=i {
                out.push_str(&format!("coeff,{},{},{:.16e}\n", i + 1, j + 1, self.coeffs[(i, j)]));
            }
        }
        out
    }
}

/// Dimension of `L²(μ)`: atoms with positive intensity, plus one if `σ > 0`.
pub fn max_order(spec: &LevySpec) -> usize {
    spec.atoms.iter().filter(|a| a.intensity > 0.0).count() + usize::from(spec.sigma > 0.0)
}

pub fn build_basis(spec: &LevySpec, order: usize) -> Result<TeugelsBasis> {
    spec.validate()?;
    if order == 0 {
        return Err(Error::InvalidOrder(0));
    }
    let max = max_order(spec);
    if order > max {
        return Err(Error::SingularGram { order, max });
    }
    let moments: Vec<f64> = (2..=2 * order).map(|k| spec.moment(k as i32)).collect();
    let mut gram = DMatrix::<f64>::from_fn(order, order, |i, j| moments[i + j]);
    gram[(0, 0)] += spec.sigma * spec.sigma;

    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if lo <= 0.0 {
        return Err(Error::SingularGram { order, max });
    }
    let cond = hi / lo;
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }

    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::SingularGram { order, max })?;
    let lower = chol.l();
    let coeffs = lower
        .solve_lower_triangular(&DMatrix::identity(order, order))
        .ok_or(Error::SingularGram { order, max })?;

    Ok(TeugelsBasis {
        order,
        moments,
        gram,
        coeffs,
    })
}

/// Fills `dH^(i)` for `i ≤ p` in every scenario from the compensated processes.
pub fn teugels_increments(bundle: &mut PathBundle, basis: &TeugelsBasis) -> Result<()> {
    let p = basis.order();
    if bundle.compensated_order() < p {
        return Err(Error::Dimension {
            what: "compensated power-jump processes",
            expected: p,
            found: bundle.compensated_order(),
        });
    }
    let n_steps = bundle.grid.n_steps();
    bundle.scenarios.par_iter_mut().for_each(|s| {
        let n_paths = s.n_paths();
        let mut dh = Vec::with_capacity(p);
        for i in 1..=p {
            let mut inc = Array2::<f64>::zeros((n_steps, n_paths));
            for k in 0..n_steps {
                for j in 0..n_paths {
                    let mut v = 0.0;
                    for m in 1..=i {
                        let y = &s.ycomp[m - 1];
                        v += basis.c(i, m) * (y[[k + 1, j]] - y[[k, j]]);
                    }
                    inc[[k, j]] = v;
                }
            }
            dh.push(inc);
        }
        s.dh = dh;
    });
    Ok(())
}

/// Populates the compensated processes up to `basis.order()` and the Teugels increments.
pub fn attach_teugels(bundle: &mut PathBundle, basis: &TeugelsBasis) -> Result<()> {
    if bundle.compensated_order() < basis.order() {
        bundle.populate_compensated(basis.order())?;
    }
    teugels_increments(bundle, basis)
}

/// Simulates a bundle and attaches the Teugels increments of the given order,
/// `None` meaning [`max_order`]. A driver without jumps gets the empty basis.
pub fn simulate_with_basis(
    spec: &LevySpec,
    grid: &crate::levy::TimeGrid,
    n_scenarios: usize,
    n_paths: usize,
    seed: u64,
    order: Option<usize>,
) -> Result<(PathBundle, TeugelsBasis)> {
    let mut bundle = crate::levy::sample_paths(spec, grid, n_scenarios, n_paths, seed)?;
    let order = order.unwrap_or_else(|| max_order(spec));
    let basis = if order == 0 {
        TeugelsBasis::empty()
    } else {
        build_basis(spec, order)?
    };
    attach_teugels(&mut bundle, &basis)?;
    Ok((bundle, basis))
}

/// Node values `H^(i)_{t_k}` (with `H_0 = 0`) for one scenario, `i` 1-based.
pub fn teugels_values(bundle: &PathBundle, scenario: usize, i: usize) -> Result<Array2<f64>> {
    let s = &bundle.scenarios[scenario];
    if i == 0 || i > s.dh.len() {
        return Err(Error::Dimension {
            what: "Teugels order",
            expected: s.dh.len(),
            found: i,
        });
    }
    let inc = &s.dh[i - 1];
    let mut out = Array2::<f64>::zeros((bundle.grid.n_nodes(), s.n_paths()));
    for k in 0..inc.nrows() {
        for j in 0..s.n_paths() {
            out[[k + 1, j]] = out[[k, j]] + inc[[k, j]];
        }
    }
    Ok(out)
}
