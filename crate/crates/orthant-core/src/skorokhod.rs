//! Deterministic solver for the controlled Skorokhod problem.
//!
//! Given a driving path `ψ_i(t) = x_i + ∫ b_i(X) ds + w_i(t)` and a
//! piecewise-constant control `v` with values in `M(α)`, the constrained
//! pair `(X, Y)` is the fixed point of the maps
//!
//! ```text
//! T_i(x, y)(t) = sup_{0≤s≤t} max{0, −U_i(x, y)(s)},
//! S_i(x, y)(t) = U_i(x, y)(t) + T_i(x, y)(t),
//! U_i(x, y)(t) = x_i(0) + ∫₀ᵗ b_i(x) ds + w_i(t) + Σ_{j≠i} ∫₀ᵗ v_ij dy_j,
//! ```
//!
//! which is a contraction for the metric `γ₁‖x − x̄‖_T + γ₂‖y − ȳ‖_T`
//! (sup norm on x, total variation on y, both summed over coordinates)
//! once `max_i α_i (2γ₁+γ₂)/γ₂ < 1` and the window length `T` satisfies
//! `K d T (2γ₁+γ₂)/γ₁ < 1`. [`solve_controlled`] runs that Picard iteration
//! window by window; [`solve_causal`] computes the same grid fixed point by
//! forward recursion (the two are cross-checked in the tests) and is what
//! the Monte Carlo engine uses per step.
//!
//! Everything here uses left-point quadrature for `∫ b` and `∫ v dy`, which
//! matches the non-anticipativity of admissible controls: the interval
//! `[t_k, t_{k+1})` sees the control and drift frozen at `t_k`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, ReflectionMatrix};

/// Uniform time grid on `[0, T]`, `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
    dt: f64,
}

impl TimeGrid {
    /// Grid with `steps` intervals of width `dt` (so `steps + 1` points).
    pub fn uniform(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 {
            return Err(Error::Precondition(
                "time grid needs dt > 0 and at least one step".into(),
            ));
        }
        let t = (0..=steps).map(|k| k as f64 * dt).collect();
        Ok(TimeGrid { t, dt })
    }

    /// Grid covering `[0, horizon]` with steps of width `dt` (the horizon is
    /// rounded to a whole number of steps).
    pub fn from_horizon(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Precondition("horizon must be positive".into()));
        }
        let steps = (horizon / dt).round().max(1.0) as usize;
        TimeGrid::uniform(dt, steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.t.len() == other.t.len()
            && self
                .t
                .iter()
                .zip(&other.t)
                .all(|(a, b)| (a - b).abs() <= 1e-12)
    }
}

/// Noise-plus-start data for one solve: `w` holds samples of `Σ W(t)`.
#[derive(Debug, Clone)]
pub struct DrivingPath {
    pub grid: TimeGrid,
    /// `w[k]` is the d-vector `Σ W(t_k)`; `w[0] = 0`.
    pub w: Vec<Vec<f64>>,
    /// Start point in the orthant.
    pub x0: Vec<f64>,
}

impl DrivingPath {
    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "driver has {} samples for {} grid points",
                self.w.len(),
                self.grid.len()
            )));
        }
        if self.w[0].iter().any(|&v| v != 0.0) {
            return Err(Error::Precondition("driver must start at w(0) = 0".into()));
        }
        if self.x0.iter().any(|&v| v < 0.0) {
            return Err(Error::Precondition("x0 must be in the orthant".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant control: `m[k]` acts on `[t_k, t_{k+1})`, so there is
/// one matrix per grid interval.
#[derive(Debug, Clone)]
pub struct ControlPath {
    pub grid: TimeGrid,
    pub m: Vec<ReflectionMatrix>,
}

impl ControlPath {
    pub fn constant(grid: TimeGrid, m: ReflectionMatrix) -> Self {
        let steps = grid.steps();
        ControlPath {
            grid,
            m: vec![m; steps],
        }
    }

    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        if self.m.len() != self.grid.steps() {
            return Err(Error::GridMismatch(format!(
                "control has {} matrices for {} intervals",
                self.m.len(),
                self.grid.steps()
            )));
        }
        for m in &self.m {
            m.validate(&spec.alpha)?;
        }
        Ok(())
    }
}

/// Solved constrained pair on a grid.
#[derive(Debug, Clone)]
pub struct PathPair {
    pub grid: TimeGrid,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Total Picard iterations spent (0 for the causal solver).
    pub iterations: usize,
    /// Largest terminal iterate distance over the windows.
    pub final_distance: f64,
}

impl PathPair {
    /// Discrete complementarity defect `Σ_k Σ_i x_i(t_k)(y_i(t_{k+1}) − y_i(t_k))`.
    pub fn complementarity_defect(&self) -> f64 {
        let d = self.x[0].len();
        let mut acc = 0.0;
        for k in 0..self.grid.steps() {
            for i in 0..d {
                acc += self.x[k][i] * (self.y[k + 1][i] - self.y[k][i]);
            }
        }
        acc
    }
}

/// Constants of the contraction argument.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContractionConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Window length: the Picard maps contract on `[0, t0]`.
    pub t0: f64,
    /// Contraction factor, the max of the two inequality left-hand sides.
    pub rho: f64,
}

/// Picks `γ₁ = 1`, `γ₂ = 4 maxα/(1 − maxα)` (or 1 when α = 0) and then a
/// window `t0` with `K d t0 (2γ₁+γ₂)/γ₁ = 1/2`, so both contraction
/// inequalities hold strictly.
pub fn default_constants(spec: &ProblemSpec) -> Result<ContractionConstants> {
    let maxa = spec.max_alpha();
    if maxa >= 1.0 {
        return Err(Error::Constraint("max_i alpha_i must be < 1".into()));
    }
    let gamma1 = 1.0;
    let gamma2 = if maxa > 0.0 {
        4.0 * maxa / (1.0 - maxa)
    } else {
        1.0
    };
    let k = spec.lipschitz_bound;
    let d = spec.d as f64;
    let t0 = 0.5 * gamma1 / (k * d * (2.0 * gamma1 + gamma2));
    let rho_alpha = maxa * (2.0 * gamma1 + gamma2) / gamma2;
    let rho_drift = k * d * t0 * (2.0 * gamma1 + gamma2) / gamma1;
    let rho = rho_alpha.max(rho_drift);
    debug_assert!(rho < 1.0);
    Ok(ContractionConstants {
        gamma1,
        gamma2,
        t0,
        rho,
    })
}

/// One-dimensional Skorokhod map on a grid:
/// `η(t_k) = max_{s≤k} (−ψ(s))⁺`, `φ = ψ + η`.
pub fn skorokhod_1d(psi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if psi.is_empty() || psi[0] < 0.0 {
        return Err(Error::Precondition("psi must start nonnegative".into()));
    }
    let mut eta = Vec::with_capacity(psi.len());
    let mut running = 0.0f64;
    for &p in psi {
        running = running.max(-p).max(0.0);
        eta.push(running);
    }
    let phi = psi.iter().zip(&eta).map(|(p, e)| p + e).collect();
    Ok((phi, eta))
}

/// `γ₁ Σ_i sup_k |x_i − x̄_i| + γ₂ Σ_i TV(y_i − ȳ_i)` on the common grid.
pub fn path_metric(a: &PathPair, b: &PathPair, constants: &ContractionConstants) -> Result<f64> {
    if !a.grid.same_as(&b.grid) {
        return Err(Error::GridMismatch("path metric needs a common grid".into()));
    }
    let d = a.x[0].len();
    Ok(metric_on_slices(
        &a.x, &a.y, &b.x, &b.y, d, constants.gamma1, constants.gamma2,
    ))
}

fn metric_on_slices(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    xb: &[Vec<f64>],
    yb: &[Vec<f64>],
    d: usize,
    gamma1: f64,
    gamma2: f64,
) -> f64 {
    let n = x.len();
    let mut sup = vec![0.0f64; d];
    let mut tv = vec![0.0f64; d];
    for k in 0..n {
        for i in 0..d {
            let dx = (x[k][i] - xb[k][i]).abs();
            if dx > sup[i] {
                sup[i] = dx;
            }
            if k > 0 {
                let prev = y[k - 1][i] - yb[k - 1][i];
                let cur = y[k][i] - yb[k][i];
                tv[i] += (cur - prev).abs();
            }
        }
    }
    gamma1 * sup.iter().sum::<f64>() + gamma2 * tv.iter().sum::<f64>()
}

/// Per-window distance traces of the Picard iteration.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    /// `windows[w][k]` is the metric between iterates k and k+1 of window w.
    pub windows: Vec<Vec<f64>>,
}

/// Windowed Picard iteration for the controlled Skorokhod problem.
///
/// The horizon is partitioned into windows of length at most `t0` from
/// [`default_constants`]. Each window iterates `(x, y) ← (S(x,y), T(x,y))`
/// from the flat start (`x` frozen at the window entry state, `y = 0`,
/// re-based to the window) until the iterate metric drops below `tol`.
pub fn solve_controlled(
    driver: &DrivingPath,
    control: &ControlPath,
    spec: &ProblemSpec,
    tol: f64,
    max_iter: usize,
) -> Result<PathPair> {
    solve_controlled_traced(driver, control, spec, tol, max_iter).map(|(p, _)| p)
}

/// Same as [`solve_controlled`] but also returns the iterate-distance traces,
/// which the contraction checks feed on.
pub fn solve_controlled_traced(
    driver: &DrivingPath,
    control: &ControlPath,
    spec: &ProblemSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(PathPair, SolveTrace)> {
    driver.validate()?;
    control.validate(spec)?;
    if !driver.grid.same_as(&control.grid) {
        return Err(Error::GridMismatch(
            "driver and control grids differ".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    if driver.x0.len() != spec.d {
        return Err(Error::Dimension {
            expected: spec.d,
            got: driver.x0.len(),
        });
    }

    let d = spec.d;
    let n = driver.grid.len();
    let dt = driver.grid.dt();
    let constants = default_constants(spec)?;
    let wsteps = ((constants.t0 / dt).floor() as usize).max(1);

    let mut xg = vec![vec![0.0; d]; n];
    let mut yg = vec![vec![0.0; d]; n];
    xg[0].copy_from_slice(&driver.x0);

    let mut trace = SolveTrace::default();
    let mut total_iter = 0usize;
    let mut final_distance = 0.0f64;

    let mut a = 0usize;
    while a < n - 1 {
        let b = (a + wsteps).min(n - 1);
        let m = b - a; // intervals in this window
        let xinit = xg[a].clone();

        // iterate storage, local to the window
        let mut x = vec![xinit.clone(); m + 1];
        let mut y: Vec<Vec<f64>> = vec![vec![0.0; d]; m + 1];
        let mut xn: Vec<Vec<f64>> = vec![vec![0.0; d]; m + 1];
        let mut yn: Vec<Vec<f64>> = vec![vec![0.0; d]; m + 1];
        let mut acc = vec![0.0; d]; // ∫b + ∫v dy accumulated up to t_k
        let mut bx = vec![0.0; d];

        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..max_iter {
            // apply (S, T) to (x, y)
            acc.fill(0.0);
            for i in 0..d {
                xn[0][i] = xinit[i];
                yn[0][i] = 0.0;
            }
            for k in 1..=m {
                spec.drift_at(&x[k - 1], &mut bx);
                let v = &control.m[a + k - 1];
                for i in 0..d {
                    let mut coupling = 0.0;
                    for j in 0..d {
                        if j != i {
                            let pij = v.p(i, j);
                            if pij != 0.0 {
                                coupling -= pij * (y[k][j] - y[k - 1][j]);
                            }
                        }
                    }
                    acc[i] += bx[i] * dt + coupling;
                    let u = xinit[i] + acc[i] + (driver.w[a + k][i] - driver.w[a][i]);
                    let prev = yn[k - 1][i];
                    let eta = prev.max(-u).max(0.0);
                    yn[k][i] = eta;
                    xn[k][i] = u + eta;
                }
            }
            total_iter += 1;
            let dist = metric_on_slices(&xn, &yn, &x, &y, d, constants.gamma1, constants.gamma2);
            history.push(dist);
            std::mem::swap(&mut x, &mut xn);
            std::mem::swap(&mut y, &mut yn);
            if dist < tol {
                converged = true;
                final_distance = final_distance.max(dist);
                break;
            }
        }
        if !converged {
            let last = *history.last().unwrap_or(&f64::NAN);
            return Err(Error::NonConvergence {
                iterations: total_iter,
                last,
                history,
            });
        }
        trace.windows.push(history);

        let ybase = yg[a].clone();
        for k in 1..=m {
            for i in 0..d {
                // residual negativity below tol is discretization noise
                xg[a + k][i] = if x[k][i] < 0.0 && x[k][i] >= -tol {
                    0.0
                } else {
                    x[k][i]
                };
                yg[a + k][i] = ybase[i] + y[k][i];
            }
        }
        a = b;
    }

    Ok((
        PathPair {
            grid: driver.grid.clone(),
            x: xg,
            y: yg,
            iterations: total_iter,
            final_distance,
        },
        trace,
    ))
}

/// One grid interval of the constrained dynamics, advanced in place.
///
/// `free_i = x_i + b_i(x) dt + dw_i` is the uncontrolled move; the push
/// increments solve the monotone fixed point
/// `Δy_i = (−free_i + Σ_{j≠i} P_ij Δy_j)⁺`, iterated upward from zero
/// (rate `max α < 1`). On return `x` holds the end state (exact zeros on
/// pushed coordinates) and `dy` the push increments.
pub fn controlled_step(
    spec: &ProblemSpec,
    control: &ReflectionMatrix,
    x: &mut [f64],
    dy: &mut [f64],
    dw: &[f64],
    dt: f64,
    scratch: &mut [f64],
) {
    let d = spec.d;
    let (free, bx) = scratch.split_at_mut(d);
    spec.drift_at(x, bx);
    for i in 0..d {
        free[i] = x[i] + bx[i] * dt + dw[i];
        dy[i] = (-free[i]).max(0.0);
    }
    let coupled = (0..d).any(|i| dy[i] > 0.0)
        && (0..d).any(|i| (0..d).any(|j| j != i && control.p(i, j) != 0.0));
    if coupled {
        for _ in 0..400 {
            let mut change = 0.0f64;
            for i in 0..d {
                let mut v = -free[i];
                for j in 0..d {
                    if j != i {
                        let pij = control.p(i, j);
                        if pij != 0.0 {
                            v += pij * dy[j];
                        }
                    }
                }
                let v = v.max(0.0);
                change = change.max((v - dy[i]).abs());
                dy[i] = v;
            }
            if change <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |a, &b| a.max(b.abs()))) {
                break;
            }
        }
    }
    for i in 0..d {
        if dy[i] > 0.0 {
            x[i] = 0.0;
        } else {
            let mut v = free[i];
            for j in 0..d {
                if j != i {
                    let pij = control.p(i, j);
                    if pij != 0.0 {
                        v -= pij * dy[j];
                    }
                }
            }
            x[i] = v.max(0.0);
        }
    }
}

/// Forward-recursion solution of the same grid fixed point that
/// [`solve_controlled`] reaches by Picard iteration. The two agree to
/// within the inner step tolerance; the tests pin that down.
pub fn solve_causal(
    driver: &DrivingPath,
    control: &ControlPath,
    spec: &ProblemSpec,
) -> Result<PathPair> {
    driver.validate()?;
    control.validate(spec)?;
    if !driver.grid.same_as(&control.grid) {
        return Err(Error::GridMismatch(
            "driver and control grids differ".into(),
        ));
    }
    let d = spec.d;
    let n = driver.grid.len();
    let dt = driver.grid.dt();
    let mut x = vec![vec![0.0; d]; n];
    let mut y = vec![vec![0.0; d]; n];
    x[0].copy_from_slice(&driver.x0);
    let mut state = driver.x0.clone();
    let mut dy = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut scratch = vec![0.0; 2 * d];
    for k in 0..n - 1 {
        for i in 0..d {
            dw[i] = driver.w[k + 1][i] - driver.w[k][i];
        }
        controlled_step(spec, &control.m[k], &mut state, &mut dy, &dw, dt, &mut scratch);
        for i in 0..d {
            x[k + 1][i] = state[i];
            y[k + 1][i] = y[k][i] + dy[i];
        }
    }
    Ok(PathPair {
        grid: driver.grid.clone(),
        x,
        y,
        iterations: 0,
        final_distance: 0.0,
    })
}

/// Check of the pathwise reflection bound
/// `Σ_i Y_i(t) ≤ (|b|₁ t + Σ_i β_i(t)) / (1 − max_i α_i)` with
/// `β_i(t) = sup_{s≤t} (−w_i(s))⁺`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// Largest `lhs − rhs` over grid times (≤ 0 means the bound holds).
    pub max_violation: f64,
    /// Largest `lhs / rhs` over grid times with positive rhs.
    pub tightest_ratio: f64,
    pub passed: bool,
}

pub fn check_reflection_bound(
    pair: &PathPair,
    driver: &DrivingPath,
    spec: &ProblemSpec,
) -> Result<BoundReport> {
    if !pair.grid.same_as(&driver.grid) {
        return Err(Error::GridMismatch("pair and driver grids differ".into()));
    }
    let d = spec.d;
    let b1 = spec.drift_l1_bound();
    let denom = 1.0 - spec.max_alpha();
    let mut beta = vec![0.0f64; d];
    let mut max_violation = f64::NEG_INFINITY;
    let mut tightest = 0.0f64;
    for (k, &t) in pair.grid.times().iter().enumerate() {
        let mut betasum = 0.0;
        for i in 0..d {
            beta[i] = beta[i].max(-driver.w[k][i]).max(0.0);
            betasum += beta[i];
        }
        let lhs: f64 = pair.y[k].iter().sum();
        let rhs = (b1 * t + betasum) / denom;
        max_violation = max_violation.max(lhs - rhs);
        if rhs > 0.0 {
            tightest = tightest.max(lhs / rhs);
        }
    }
    Ok(BoundReport {
        max_violation,
        tightest_ratio: tightest,
        passed: max_violation <= 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, Drift, RunningCost};

    fn spec(d: usize, alpha: Vec<f64>, k: f64) -> ProblemSpec {
        ProblemSpec {
            d,
            alpha,
            drift: Drift::Constant { value: vec![0.0; d] },
            sigma: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            beta: 1.0,
            cost: CostSpec {
                kind: RunningCost::Linear { w: vec![0.0; d] },
                degree: 1,
                constant: 1.0,
            },
            boundary_cost: vec![0.0; d],
            lipschitz_bound: k,
        }
    }

    #[test]
    fn skorokhod_1d_examples() {
        let psi: Vec<f64> = (0..=4).map(|k| -(k as f64) * 0.25).collect();
        let (phi, eta) = skorokhod_1d(&psi).unwrap();
        assert_eq!(eta, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(phi.iter().all(|&v| v == 0.0));

        let psi: Vec<f64> = (0..=4).map(|k| (k as f64) * 0.25).collect();
        let (phi, eta) = skorokhod_1d(&psi).unwrap();
        assert!(eta.iter().all(|&v| v == 0.0));
        assert_eq!(phi, psi);

        let (phi, eta) = skorokhod_1d(&[0.0, -1.0, 1.0, -3.0]).unwrap();
        assert_eq!(eta, vec![0.0, 1.0, 1.0, 3.0]);
        assert_eq!(phi, vec![0.0, 0.0, 2.0, 0.0]);

        assert!(skorokhod_1d(&[-0.1, 0.0]).is_err());
    }

    #[test]
    fn default_constants_examples() {
        let s = spec(2, vec![0.5, 0.5], 1.0);
        let c = default_constants(&s).unwrap();
        assert!((c.gamma2 - 4.0).abs() < 1e-14);
        assert!((c.t0 - 0.5 / 12.0).abs() < 1e-14);
        assert!((c.rho - 0.75).abs() < 1e-14);

        let s = spec(1, vec![0.0], 1.0);
        let c = default_constants(&s).unwrap();
        assert_eq!(c.gamma2, 1.0);
        assert!(c.rho < 1.0);

        let s = spec(2, vec![0.9, 0.9], 1.0);
        let c = default_constants(&s).unwrap();
        assert!((c.gamma2 - 36.0).abs() < 1e-12);
        assert!((0.9f64 * 38.0 / 36.0 - 0.95).abs() < 1e-12);
        assert!((c.rho - 0.95).abs() < 1e-12);
    }

    fn ramp_driver(grid: &TimeGrid, d: usize, slope: f64) -> DrivingPath {
        DrivingPath {
            grid: grid.clone(),
            w: grid
                .times()
                .iter()
                .map(|&t| (0..d).map(|_| slope * t).collect())
                .collect(),
            x0: vec![0.0; d],
        }
    }

    #[test]
    fn pure_downward_drift_pins_at_zero() {
        let grid = TimeGrid::uniform(0.05, 20).unwrap();
        let s = spec(1, vec![0.0], 1e-6);
        let driver = ramp_driver(&grid, 1, -1.0);
        let control = ControlPath::constant(grid.clone(), ReflectionMatrix::identity(1));
        let pair = solve_controlled(&driver, &control, &s, 1e-12, 500).unwrap();
        for (k, &t) in grid.times().iter().enumerate() {
            assert!(pair.x[k][0].abs() <= 1e-14);
            assert!((pair.y[k][0] - t).abs() <= 1e-12);
        }
        // matches the closed-form 1-d map exactly
        let psi: Vec<f64> = grid.times().iter().map(|&t| -t).collect();
        let (phi, eta) = skorokhod_1d(&psi).unwrap();
        for k in 0..grid.len() {
            assert!((pair.x[k][0] - phi[k]).abs() <= 1e-14);
            assert!((pair.y[k][0] - eta[k]).abs() <= 1e-14);
        }
    }

    #[test]
    fn quiescent_control_does_nothing() {
        // no noise, no drift: the state parks on the face and Y stays zero
        let grid = TimeGrid::uniform(0.1, 10).unwrap();
        let s = spec(2, vec![0.5, 0.5], 1e-6);
        let driver = DrivingPath {
            grid: grid.clone(),
            w: vec![vec![0.0; 2]; grid.len()],
            x0: vec![0.0, 1.0],
        };
        let mut m = ReflectionMatrix::identity(2);
        m.set_column(0, Some(1), 0.5);
        let control = ControlPath::constant(grid.clone(), m);
        let pair = solve_controlled(&driver, &control, &s, 1e-12, 200).unwrap();
        for k in 0..grid.len() {
            assert_eq!(pair.x[k], vec![0.0, 1.0]);
            assert_eq!(pair.y[k], vec![0.0, 0.0]);
        }
    }

    #[test]
    fn path_metric_examples() {
        let grid = TimeGrid::uniform(0.5, 2).unwrap();
        let consts = ContractionConstants {
            gamma1: 1.0,
            gamma2: 4.0,
            t0: 1.0,
            rho: 0.5,
        };
        let base = PathPair {
            grid: grid.clone(),
            x: vec![vec![0.0; 2]; 3],
            y: vec![vec![0.0; 2]; 3],
            iterations: 0,
            final_distance: 0.0,
        };
        assert_eq!(path_metric(&base, &base, &consts).unwrap(), 0.0);

        let mut shifted = base.clone();
        for k in 0..3 {
            shifted.x[k][1] = 1.0;
        }
        assert_eq!(path_metric(&base, &shifted, &consts).unwrap(), 1.0);

        let mut jump = base.clone();
        jump.y[1][0] = 0.5;
        jump.y[2][0] = 0.5;
        assert_eq!(path_metric(&base, &jump, &consts).unwrap(), 2.0);
    }

    #[test]
    fn reflection_bound_tight_on_downward_ramp() {
        let grid = TimeGrid::uniform(0.05, 20).unwrap();
        let s = spec(1, vec![0.0], 1e-6);
        let driver = ramp_driver(&grid, 1, -1.0);
        let control = ControlPath::constant(grid.clone(), ReflectionMatrix::identity(1));
        let pair = solve_controlled(&driver, &control, &s, 1e-12, 500).unwrap();
        let report = check_reflection_bound(&pair, &driver, &s).unwrap();
        assert!(report.passed);
        assert!((report.tightest_ratio - 1.0).abs() <= 1e-9, "bound is tight");

        // zero driver: Y ≡ 0 and the bound holds with equality 0 ≤ 0
        let driver0 = DrivingPath {
            grid: grid.clone(),
            w: vec![vec![0.0]; grid.len()],
            x0: vec![0.0],
        };
        let pair0 = solve_controlled(&driver0, &control, &s, 1e-12, 500).unwrap();
        let report0 = check_reflection_bound(&pair0, &driver0, &s).unwrap();
        assert!(report0.passed);
        assert_eq!(report0.max_violation, 0.0);
    }

    #[test]
    fn causal_matches_picard_on_coupled_instance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        let grid = TimeGrid::uniform(0.01, 150).unwrap();
        let mut s = spec(3, vec![0.3, 0.5, 0.7], 1.0);
        s.drift = Drift::Constant {
            value: vec![-0.5, 0.25, -0.25],
        };
        for _ in 0..5 {
            let mut w = vec![vec![0.0; 3]];
            for k in 1..grid.len() {
                let prev = w[k - 1].clone();
                w.push(
                    (0..3)
                        .map(|i| prev[i] + rng.gen_range(-0.2..0.2))
                        .collect(),
                );
            }
            let driver = DrivingPath {
                grid: grid.clone(),
                w,
                x0: vec![0.1, 0.0, 0.3],
            };
            let mut m = ReflectionMatrix::identity(3);
            m.set_column(0, Some(1), 0.3);
            m.set_column(1, Some(2), 0.5);
            m.set_column(2, Some(0), 0.7);
            let control = ControlPath::constant(grid.clone(), m);
            let picard = solve_controlled(&driver, &control, &s, 1e-12, 2000).unwrap();
            let causal = solve_causal(&driver, &control, &s).unwrap();
            let consts = default_constants(&s).unwrap();
            let dist = path_metric(&picard, &causal, &consts).unwrap();
            assert!(dist <= 1e-10, "causal vs picard distance {dist}");
            assert!(picard.complementarity_defect() >= 0.0);
        }
    }

    #[test]
    fn nonconvergence_reports_history() {
        let grid = TimeGrid::uniform(0.05, 20).unwrap();
        let s = spec(2, vec![0.9, 0.9], 1.0);
        let driver = ramp_driver(&grid, 2, -1.0);
        let mut m = ReflectionMatrix::identity(2);
        m.set_column(0, Some(1), 0.9);
        m.set_column(1, Some(0), 0.9);
        let control = ControlPath::constant(grid.clone(), m);
        match solve_controlled(&driver, &control, &s, 1e-14, 2) {
            Err(Error::NonConvergence { history, .. }) => assert_eq!(history.len(), 2),
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let grid = TimeGrid::uniform(0.05, 20).unwrap();
        let other = TimeGrid::uniform(0.05, 21).unwrap();
        let s = spec(1, vec![0.0], 1.0);
        let driver = ramp_driver(&grid, 1, -1.0);
        let control = ControlPath::constant(other, ReflectionMatrix::identity(1));
        assert!(matches!(
            solve_controlled(&driver, &control, &s, 1e-10, 100),
            Err(Error::GridMismatch(_))
        ));
    }
}
