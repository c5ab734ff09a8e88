//! Reference solutions computed without the solver.
//!
//! Grids here are uniform with step `T / N` on the whole window `[0, T + K]`,
//! so an anticipated time `t_k + δ` sits at node `k + round(δ / Δt)`.

/// `f = constant + y·Y_t + y_future·Y_{t+δ}` for the deterministic recursions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearDriver {
    pub constant: f64,
    pub y: f64,
    pub y_future: f64,
}

/// Explicit backward recursion `y_k = y_{k+1} + Δt (c + a y_{k+1} + b y_{k+d})`
/// on `N` main steps plus the extension nodes, which hold `η`.
///
/// Returns the node values on `[0, T + K]`.
pub fn deterministic_delay_recursion(
    driver: LinearDriver,
    xi: f64,
    eta: impl Fn(f64) -> f64,
    delta: f64,
    horizon: f64,
    n: usize,
) -> Vec<f64> {
    let dt = horizon / n as f64;
    let shift = if driver.y_future == 0.0 { 0 } else { (delta / dt).round() as usize };
    let mut y = vec![0.0; n + shift + 1];
    y[n] = xi;
    for (m, v) in y.iter_mut().enumerate().skip(n + 1) {
        *v = eta(horizon + (m - n) as f64 * dt);
    }
    for k in (0..n).rev() {
        let next = y[k + 1];
        y[k] = next + dt * (driver.constant + driver.y * next + driver.y_future * y[k + shift]);
    }
    y
}

/// Reflected backward recursion `Y_k = max(ỹ_k, S(t_k))` for `k < N`.
///
/// Returns `(Y, K)` with `K_0 = 0` and `K_{k+1} - K_k = Y_k - ỹ_k`.
pub fn reflected_dp(
    driver: LinearDriver,
    xi: f64,
    barrier: impl Fn(f64) -> f64,
    horizon: f64,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dt = horizon / n as f64;
    let mut y = vec![xi; n + 1];
    let mut push = vec![0.0; n];
    for k in (0..n).rev() {
        let free = y[k + 1] + dt * (driver.constant + driver.y * y[k + 1]);
        y[k] = free.max(barrier(k as f64 * dt));
        push[k] = y[k] - free;
    }
    let mut k_vals = vec![0.0; n + 1];
    for k in 0..n {
        k_vals[k + 1] = k_vals[k] + push[k];
    }
    (y, k_vals)
}

/// Closed-form representation of `ξ = Y^(1)_T` for one atom `(a, λ)`.
///
/// `Y^(1)_t = L_t - t (b + λ a)` is its own conditional expectation and
/// `dY^(1) = |a| √λ dH^(1)`, so `Z^(1) ≡ |a| √λ`.
pub fn closed_form_martingale(
    drift: f64,
    size: f64,
    intensity: f64,
    levy: &[f64],
    times: &[f64],
) -> (Vec<f64>, f64) {
    let mean = drift + intensity * size;
    let y = levy.iter().zip(times).map(|(l, t)| l - t * mean).collect();
    (y, size.abs() * intensity.sqrt())
}
