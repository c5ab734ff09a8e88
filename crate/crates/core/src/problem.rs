//! Problem declarations and their structural checks.
//!
//! Generators, delays, terminal data and barriers come from closed families of
//! named shapes so that every Lipschitz constant and every change-of-variables
//! constant can be certified from the parameters alone.

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::levy::{LevySpec, TimeGrid};

const SLACK: f64 = 1e-12;

/// Anticipation delay `φ` (or `ψ`) on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    /// `φ(t) = δ`.
    Constant { delta: f64 },
    /// `φ(t) = ρ (T - t) + δ₀`.
    Affine { rho: f64, delta0: f64 },
}

impl DelaySpec {
    pub fn eval(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            DelaySpec::Constant { delta } => delta,
            DelaySpec::Affine { rho, delta0 } => rho * (horizon - t) + delta0,
        }
    }

    fn slope(&self) -> f64 {
        match *self {
            DelaySpec::Constant { .. } => 0.0,
            DelaySpec::Affine { rho, .. } => -rho,
        }
    }

    /// Smallest extension length `K` satisfying (A).
    pub fn required_extension(&self, horizon: f64) -> f64 {
        // t + φ(t) is affine with positive slope, so the sup sits at t = T.
        self.eval(horizon, horizon)
    }

    /// Closed-form constant of (B): the map `s ↦ s + φ(s)` has derivative
    /// `1 + φ'`, so `∫ h(s + φ(s)) ds ≤ (1 + φ')⁻¹ ∫ h(u) du`.
    pub fn change_of_variables_constant(&self) -> Result<f64> {
        let speed = 1.0 + self.slope();
        if !(speed > 0.0) {
            return Err(Error::UnsupportedDelay(format!(
                "t + phi(t) must be strictly increasing, slope is {speed}"
            )));
        }
        Ok(1.0 / speed)
    }

    fn validate(&self, horizon: f64, extension: f64) -> Result<f64> {
        let params_finite = match *self {
            DelaySpec::Constant { delta } => delta.is_finite(),
            DelaySpec::Affine { rho, delta0 } => rho.is_finite() && delta0.is_finite(),
        };
        if !params_finite {
            return Err(Error::UnsupportedDelay("non-finite delay parameters".into()));
        }
        let m = self.change_of_variables_constant()?;
        let lowest = self.eval(0.0, horizon).min(self.eval(horizon, horizon));
        if lowest <= 0.0 {
            return Err(Error::UnsupportedDelay(format!(
                "delays must be strictly positive on [0, T], minimum is {lowest}"
            )));
        }
        let needed = self.required_extension(horizon);
        if needed > extension * (1.0 + SLACK) + SLACK {
            return Err(Error::assumption(
                Assumption::A,
                format!("sup (t + phi(t)) = T + {needed} exceeds T + K = T + {extension}"),
            ));
        }
        Ok(m)
    }
}

/// Checks (A) for both delays and returns the (B) constant `max(M_φ, M_ψ)`.
pub fn validate_delays(
    phi: &DelaySpec,
    psi: &DelaySpec,
    horizon: f64,
    extension: f64,
) -> Result<f64> {
    let m_phi = phi.validate(horizon, extension)?;
    let m_psi = psi.validate(horizon, extension)?;
    Ok(m_phi.max(m_psi))
}

/// Arguments of a generator at one time point.
#[derive(Debug, Clone, Copy)]
pub struct GenArgs<'a> {
    pub y: f64,
    pub z: &'a [f64],
    /// `E^{F_t}[Y_{t+φ(t)}]`.
    pub y_future: f64,
    /// `E^{F_t}[Z_{t+ψ(t)}]`.
    pub z_future: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorFamily {
    Zero,
    Constant {
        value: f64,
    },
    /// `constant + y·Y + Σ z_i Z^(i)`.
    Affine {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        y: f64,
        #[serde(default)]
        z: Vec<f64>,
    },
    /// Affine in the present and in the anticipated arguments.
    AnticipatedAffine {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        y: f64,
        #[serde(default)]
        z: Vec<f64>,
        #[serde(default)]
        y_future: f64,
        #[serde(default)]
        z_future: Vec<f64>,
    },
    /// `constant + y·clamp(Y, lo, hi) + y_future·clamp(π, lo, hi)`.
    Clamped {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        y: f64,
        #[serde(default)]
        y_future: f64,
        lo: f64,
        hi: f64,
    },
}

/// Lipschitz weights of a family in each argument group.
#[derive(Debug, Clone, Default, PartialEq)]
struct Weights {
    y: f64,
    z: Vec<f64>,
    y_future: f64,
    z_future: Vec<f64>,
}

fn dot(coef: &[f64], v: &[f64]) -> f64 {
    coef.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl GeneratorFamily {
    pub fn eval(&self, args: &GenArgs<'_>) -> f64 {
        match self {
            GeneratorFamily::Zero => 0.0,
            GeneratorFamily::Constant { value } => *value,
            GeneratorFamily::Affine { constant, y, z } => constant + y * args.y + dot(z, args.z),
            GeneratorFamily::AnticipatedAffine {
                constant,
                y,
                z,
                y_future,
                z_future,
            } => {
                constant
                    + y * args.y
                    + dot(z, args.z)
                    + y_future * args.y_future
                    + dot(z_future, args.z_future)
            }
            GeneratorFamily::Clamped {
                constant,
                y,
                y_future,
                lo,
                hi,
            } => constant + y * args.y.clamp(*lo, *hi) + y_future * args.y_future.clamp(*lo, *hi),
        }
    }

    fn weights(&self) -> Weights {
        match self {
            GeneratorFamily::Zero | GeneratorFamily::Constant { .. } => Weights::default(),
            GeneratorFamily::Affine { y, z, .. } => Weights {
                y: *y,
                z: z.clone(),
                ..Weights::default()
            },
            GeneratorFamily::AnticipatedAffine {
                y,
                z,
                y_future,
                z_future,
                ..
            } => Weights {
                y: *y,
                z: z.clone(),
                y_future: *y_future,
                z_future: z_future.clone(),
            },
            GeneratorFamily::Clamped { y, y_future, .. } => Weights {
                y: *y,
                y_future: *y_future,
                ..Weights::default()
            },
        }
    }

    /// Whether the family reads `E[Y_{t+φ}]`.
    pub fn uses_y_future(&self) -> bool {
        self.weights().y_future != 0.0
    }

    /// Whether the family reads `E[Z_{t+ψ}]`.
    pub fn uses_z_future(&self) -> bool {
        self.weights().z_future.iter().any(|&w| w != 0.0)
    }

    /// Whether the value is independent of every argument.
    pub fn is_constant(&self) -> bool {
        let w = self.weights();
        w.y == 0.0 && w.y_future == 0.0 && w.z.iter().chain(&w.z_future).all(|&v| v == 0.0)
    }

    /// Number of `Z` components the family reads.
    pub fn z_len(&self) -> usize {
        let w = self.weights();
        let last_nonzero = |v: &[f64]| v.iter().rposition(|&x| x != 0.0).map_or(0, |i| i + 1);
        last_nonzero(&w.z).max(last_nonzero(&w.z_future))
    }

    fn finite(&self) -> bool {
        let w = self.weights();
        let extra = match self {
            GeneratorFamily::Constant { value } => value.is_finite(),
            GeneratorFamily::Affine { constant, .. } | GeneratorFamily::AnticipatedAffine { constant, .. } => {
                constant.is_finite()
            }
            GeneratorFamily::Clamped { constant, lo, hi, .. } => {
                constant.is_finite() && lo.is_finite() && hi.is_finite() && lo <= hi
            }
            GeneratorFamily::Zero => true,
        };
        extra && [w.y, w.y_future].iter().chain(&w.z).chain(&w.z_future).all(|v| v.is_finite())
    }
}

/// A generator with its declared Lipschitz structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: GeneratorFamily,
    /// Declared `c`.
    #[serde(default)]
    pub lipschitz_c: f64,
    /// Declared `α₁` (present `Z` modulus of `g`).
    #[serde(default)]
    pub alpha1: f64,
    /// Declared `α₂` (anticipated `Z` modulus of `g`).
    #[serde(default)]
    pub alpha2: f64,
}

impl GeneratorSpec {
    pub fn new(family: GeneratorFamily, lipschitz_c: f64) -> Self {
        Self {
            family,
            lipschitz_c,
            alpha1: 0.0,
            alpha2: 0.0,
        }
    }

    pub fn zero() -> Self {
        Self::new(GeneratorFamily::Zero, 0.0)
    }

    pub fn with_alphas(mut self, alpha1: f64, alpha2: f64) -> Self {
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self
    }

    pub fn eval(&self, args: &GenArgs<'_>) -> f64 {
        self.family.eval(args)
    }

    fn check_constants(&self) -> Result<()> {
        if !self.family.finite() {
            return Err(Error::InvalidSpec("generator parameters must be finite".into()));
        }
        for (name, v) in [
            ("lipschitz_c", self.lipschitz_c),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Certifies `|Δf|² ≤ c (|Δy|² + ‖Δz‖² + |Δπ|² + ‖Δζ‖²)` by Cauchy–Schwarz:
    /// the squared weights must sum to at most `c`.
    pub fn validate_as_f(&self) -> Result<()> {
        self.check_constants()?;
        let w = self.family.weights();
        let total = w.y * w.y + w.y_future * w.y_future + sq(&w.z) + sq(&w.z_future);
        if total > self.lipschitz_c * (1.0 + SLACK) + SLACK {
            return Err(Error::assumption(
                Assumption::H1Lipschitz,
                format!(
                    "f has squared Lipschitz weight {total} above the declared c = {}",
                    self.lipschitz_c
                ),
            ));
        }
        Ok(())
    }

    /// Checks the ranges of `α₁, α₂` and certifies
    /// `|Δg|² ≤ c (|Δy|² + |Δπ|²) + α₁ ‖Δz‖² + α₂ ‖Δζ‖²`
    /// through the weighted Cauchy–Schwarz bound
    /// `(y² + π²)/c + ‖z‖²/α₁ + ‖ζ‖²/α₂ ≤ 1`.
    pub fn validate_as_g(&self, m: f64) -> Result<()> {
        self.check_constants()?;
        let (a1, a2) = (self.alpha1, self.alpha2);
        if !(a1 < 0.5 && a2 * m < 1.0 && a1 + a2 * m < 0.5) {
            return Err(Error::assumption(
                Assumption::H1Contraction,
                format!("need alpha1 < 1/2, alpha2 < 1/M and alpha1 + alpha2 M < 1/2; got alpha1 = {a1}, alpha2 = {a2}, M = {m}"),
            ));
        }
        let w = self.family.weights();
        let mut budget = 0.0;
        let mut unbounded = None;
        for (weight2, constant, name) in [
            (w.y * w.y + w.y_future * w.y_future, self.lipschitz_c, "y"),
            (sq(&w.z), a1, "z"),
            (sq(&w.z_future), a2, "anticipated z"),
        ] {
            if weight2 == 0.0 {
                continue;
            }
            if constant == 0.0 {
                unbounded = Some(name);
                break;
            }
            budget += weight2 / constant;
        }
        if let Some(name) = unbounded {
            return Err(Error::assumption(
                Assumption::H1Contraction,
                format!("g depends on {name} but the matching constant is zero"),
            ));
        }
        if budget > 1.0 + SLACK {
            return Err(Error::assumption(
                Assumption::H1Contraction,
                format!("g's Lipschitz weights exceed the declared constants (budget {budget} > 1)"),
            ));
        }
        Ok(())
    }
}

/// Constants of the Picard contraction estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionConstants {
    pub eps0: f64,
    pub eps2: f64,
    pub beta: f64,
    /// `ĉ = (α₁ + α₂M) + (c/ε₀ + cM)` at the chosen `ε₀`.
    pub c_hat: f64,
    /// `inf_{ε₀ > 0} ĉ = α₁ + α₂M + cM`.
    pub c_hat_infimum: f64,
    pub feasible: bool,
}

/// Chooses `ε₀` for the contraction estimate and derives `ε₂` and `β = ε₀ + ε₂`.
///
/// `ĉ(ε₀)` decreases towards `α₁ + α₂M + cM` while `β` grows without bound, so
/// `ε₀` is set where `c/ε₀` takes half of the remaining slack below 1.
pub fn contraction_constants(f: &GeneratorSpec, g: &GeneratorSpec, m: f64) -> ContractionConstants {
    let c = f.lipschitz_c.max(g.lipschitz_c);
    let a = g.alpha1 + g.alpha2 * m;
    let infimum = a + c * m;
    let feasible = infimum < 1.0;
    let eps0 = if c == 0.0 || !feasible {
        1.0
    } else {
        c / (0.5 * (1.0 - infimum))
    };
    let c_hat = a + c / eps0 + c * m;
    let numerator = c / eps0 + c + 2.0 * c * m;
    let eps2 = if numerator == 0.0 { 0.0 } else { numerator / c_hat };
    ContractionConstants {
        eps0,
        eps2,
        beta: eps0 + eps2,
        c_hat,
        c_hat_infimum: infimum,
        feasible,
    }
}

/// Terminal variable `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Constant { value: f64 },
    /// `intercept + slope · L_T`.
    LinearLevy { intercept: f64, slope: f64 },
    /// `intercept + slope · Y^(1)_T`.
    LinearCompensated { intercept: f64, slope: f64 },
}

impl TerminalSpec {
    pub fn eval(&self, levy_terminal: f64, horizon: f64, spec: &LevySpec) -> f64 {
        match *self {
            TerminalSpec::Constant { value } => value,
            TerminalSpec::LinearLevy { intercept, slope } => intercept + slope * levy_terminal,
            TerminalSpec::LinearCompensated { intercept, slope } => {
                intercept + slope * (levy_terminal - horizon * spec.mean_power(1))
            }
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            TerminalSpec::Constant { value } => Some(value),
            TerminalSpec::LinearLevy { intercept, slope }
            | TerminalSpec::LinearCompensated { intercept, slope }
                if slope == 0.0 =>
            {
                Some(intercept)
            }
            _ => None,
        }
    }
}

/// `η` on `[T, T + K]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtensionSpec {
    Constant { value: f64 },
    /// `intercept + slope · (t - T)`.
    Affine { intercept: f64, slope: f64 },
    /// `η_t = ξ` on the whole window.
    Terminal,
}

impl ExtensionSpec {
    pub fn eval(&self, t: f64, horizon: f64, xi: f64) -> f64 {
        match *self {
            ExtensionSpec::Constant { value } => value,
            ExtensionSpec::Affine { intercept, slope } => intercept + slope * (t - horizon),
            ExtensionSpec::Terminal => xi,
        }
    }
}

/// `ϑ` on `[T, T + K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZExtensionSpec {
    #[default]
    Zero,
    /// Component `i` equals `values[i - 1]`, zero beyond the list.
    Constant { values: Vec<f64> },
}

impl ZExtensionSpec {
    pub fn component(&self, i: usize) -> f64 {
        match self {
            ZExtensionSpec::Zero => 0.0,
            ZExtensionSpec::Constant { values } => values.get(i - 1).copied().unwrap_or(0.0),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ZExtensionSpec::Zero => 0,
            ZExtensionSpec::Constant { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lower barrier `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierSpec {
    #[default]
    None,
    Constant { value: f64 },
    /// `intercept + slope · t`.
    AffineTime { intercept: f64, slope: f64 },
    /// `intercept + slope · L_t`.
    AffineLevy { intercept: f64, slope: f64 },
}

impl BarrierSpec {
    pub fn is_active(&self) -> bool {
        !matches!(self, BarrierSpec::None)
    }

    pub fn depends_on_path(&self) -> bool {
        matches!(self, BarrierSpec::AffineLevy { slope, .. } if *slope != 0.0)
    }

    /// Barrier value; `-∞` when there is none.
    pub fn eval(&self, t: f64, levy: f64) -> f64 {
        match *self {
            BarrierSpec::None => f64::NEG_INFINITY,
            BarrierSpec::Constant { value } => value,
            BarrierSpec::AffineTime { intercept, slope } => intercept + slope * t,
            BarrierSpec::AffineLevy { intercept, slope } => intercept + slope * levy,
        }
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub levy: LevySpec,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "K_ext", default)]
    pub extension: f64,
    pub f: GeneratorSpec,
    #[serde(default = "GeneratorSpec::zero")]
    pub g: GeneratorSpec,
    #[serde(default)]
    pub phi: Option<DelaySpec>,
    #[serde(default)]
    pub psi: Option<DelaySpec>,
    pub xi: TerminalSpec,
    pub eta: ExtensionSpec,
    #[serde(default)]
    pub vartheta: ZExtensionSpec,
    #[serde(default)]
    pub barrier: BarrierSpec,
}

/// Outcome of [`ProblemSpec::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validated {
    /// Constant `M` of (B); 1 when no delay is declared.
    pub m: f64,
    pub contraction: ContractionConstants,
}

impl ProblemSpec {
    /// Deterministic problem skeleton: zero generators, constant terminal data, no barrier.
    pub fn constant_terminal(levy: LevySpec, horizon: f64, xi: f64) -> Self {
        Self {
            levy,
            horizon,
            extension: 0.0,
            f: GeneratorSpec::zero(),
            g: GeneratorSpec::zero(),
            phi: None,
            psi: None,
            xi: TerminalSpec::Constant { value: xi },
            eta: ExtensionSpec::Constant { value: xi },
            vartheta: ZExtensionSpec::Zero,
            barrier: BarrierSpec::None,
        }
    }

    fn uses_phi(&self) -> bool {
        self.f.family.uses_y_future() || self.g.family.uses_y_future()
    }

    fn uses_psi(&self) -> bool {
        self.f.family.uses_z_future() || self.g.family.uses_z_future()
    }

    /// Runs every registry check: delay conditions, Lipschitz and contraction bounds, `η_T = ξ`, and `S ≤ η` for
    /// deterministic extension data and barriers.
    pub fn validate(&self) -> Result<Validated> {
        self.levy.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidSpec(format!("T must be positive, got {}", self.horizon)));
        }
        if !(self.extension.is_finite() && self.extension >= 0.0) {
            return Err(Error::InvalidSpec(format!("K_ext must be nonnegative, got {}", self.extension)));
        }
        let mut m: f64 = 1.0;
        let mut any_delay = false;
        for (delay, used, name) in [(&self.phi, self.uses_phi(), "phi"), (&self.psi, self.uses_psi(), "psi")] {
            match delay {
                Some(d) => {
                    let md = d.validate(self.horizon, self.extension)?;
                    m = if any_delay { m.max(md) } else { md };
                    any_delay = true;
                }
                None if used => {
                    return Err(Error::assumption(
                        Assumption::A,
                        format!("a generator reads anticipated values but no delay {name} is declared"),
                    ));
                }
                None => {}
            }
        }
        self.f.validate_as_f()?;
        self.g.validate_as_g(m)?;

        match (self.xi.constant_value(), self.eta) {
            (_, ExtensionSpec::Terminal) => {}
            (Some(xi), eta) => {
                let at_t = eta.eval(self.horizon, self.horizon, xi);
                if (at_t - xi).abs() > 1e-12 * (1.0 + xi.abs()) {
                    return Err(Error::assumption(
                        Assumption::TerminalMatch,
                        format!("eta_T = {at_t} differs from xi = {xi}"),
                    ));
                }
            }
            (None, _) => {
                return Err(Error::assumption(
                    Assumption::TerminalMatch,
                    "a random xi needs the extension family `terminal`",
                ));
            }
        }
        Ok(Validated {
            m,
            contraction: contraction_constants(&self.f, &self.g, m),
        })
    }

    /// `S ≤ η` on the extension nodes strictly after `T`, for deterministic data.
    /// Path-dependent barriers or terminal data are checked by the solver.
    pub fn check_barrier_on_grid(&self, grid: &TimeGrid) -> Result<()> {
        if !self.barrier.is_active() || self.barrier.depends_on_path() {
            return Ok(());
        }
        let Some(xi) = self.xi.constant_value() else {
            return Ok(());
        };
        for k in grid.terminal_index() + 1..grid.n_nodes() {
            let t = grid.time(k);
            let s = self.barrier.eval(t, 0.0);
            let eta = self.eta.eval(t, self.horizon, xi);
            if s > eta {
                return Err(Error::assumption(
                    Assumption::H2Barrier,
                    format!("S = {s} exceeds eta = {eta} at t = {t}"),
                ));
            }
        }
        Ok(())
    }
}
