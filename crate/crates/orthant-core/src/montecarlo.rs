//! Monte Carlo engine for the controlled reflected diffusion.
//!
//! Paths follow the grid dynamics of [`crate::skorokhod`]: per step the
//! free move is `x + b(x) dt + Σ ΔW`, and the push increments solve the
//! single-interval controlled Skorokhod fixed point. Costs integrate
//! `e^{−βt}(ℓ(X) dt + Σ_i h_i(v) dY_i)` with left-point quadrature, and
//! the value estimate is the smallest mean cost over a supplied family of
//! policies, which upper-bounds the true value up to statistical error.
//!
//! Reproducibility contract: every path is driven by a ChaCha20 stream
//! keyed by `(seed, path index)`, so two policies evaluated with the same
//! seed consume bitwise-identical Brownian increments (common random
//! numbers), and aggregation always runs in path-index order regardless of
//! how the batch was scheduled across threads.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, ReflectionMatrix};
use crate::skorokhod::{controlled_step, ControlPath, DrivingPath, PathPair, TimeGrid};

/// Boundary feedback policy extracted from a solved value field: per face
/// node and face, the vertex push target of the Hamiltonian argmin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub d: usize,
    pub h: f64,
    pub points_per_axis: usize,
    pub alpha: Vec<f64>,
    /// `flat_node * d + face → push target`; faces without an entry push
    /// nothing (zero column).
    pub targets: BTreeMap<u64, u32>,
}

impl FeedbackPolicy {
    /// Policy with no entries on a trivial 2-node grid: every column is
    /// zero, i.e. the control is constantly `M = I`.
    pub fn all_zero(d: usize, alpha: Vec<f64>) -> Self {
        FeedbackPolicy {
            d,
            h: 1.0,
            points_per_axis: 2,
            alpha,
            targets: BTreeMap::new(),
        }
    }

    fn snap(&self, x: &[f64], idx: &mut [usize]) {
        let n = self.points_per_axis - 1;
        for i in 0..self.d {
            let k = (x[i] / self.h).round();
            idx[i] = if k <= 0.0 { 0 } else { (k as usize).min(n) };
        }
    }

    fn flat(&self, idx: &[usize]) -> u64 {
        let mut f = 0u64;
        for i in (0..self.d).rev() {
            f = f * self.points_per_axis as u64 + idx[i] as u64;
        }
        f
    }

    /// Control at state `x`: column `i` pushes only when `x` snaps onto the
    /// face `x_i = 0` and the stored argmin there has a target.
    pub fn control_at(&self, x: &[f64], idx_scratch: &mut [usize], out: &mut ReflectionMatrix) {
        self.snap(x, idx_scratch);
        let flat = self.flat(idx_scratch);
        for i in 0..self.d {
            if idx_scratch[i] == 0 {
                let target = self
                    .targets
                    .get(&(flat * self.d as u64 + i as u64))
                    .map(|&t| t as usize);
                out.set_column(i, target, self.alpha[i]);
            } else {
                out.set_column(i, None, self.alpha[i]);
            }
        }
    }
}

/// Admissible-control recipe for the simulator: a constant vertex of
/// `M(α)`, a value-field feedback, or a named builtin rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyDescriptor {
    /// Index into [`crate::model::vertex_matrices`].
    ConstantVertex { index: usize },
    FeedbackArgmin { policy: FeedbackPolicy },
    /// Only `"identity"` (never push) is registered.
    FeedbackCallback { id: String },
}

impl PolicyDescriptor {
    pub fn identity() -> Self {
        PolicyDescriptor::ConstantVertex { index: 0 }
    }

    /// Short stable label for reports.
    pub fn label(&self) -> String {
        match self {
            PolicyDescriptor::ConstantVertex { index } => format!("vertex:{index}"),
            PolicyDescriptor::FeedbackArgmin { .. } => "feedback-argmin".into(),
            PolicyDescriptor::FeedbackCallback { id } => format!("callback:{id}"),
        }
    }
}

enum CompiledPolicy<'a> {
    Constant(ReflectionMatrix),
    Feedback(&'a FeedbackPolicy),
}

impl<'a> CompiledPolicy<'a> {
    fn compile(spec: &ProblemSpec, desc: &'a PolicyDescriptor) -> Result<Self> {
        match desc {
            PolicyDescriptor::ConstantVertex { index } => {
                let total = spec.d.pow(spec.d as u32);
                if *index >= total {
                    return Err(Error::Constraint(format!(
                        "vertex index {index} out of range (0..{total})"
                    )));
                }
                // decode the mixed-radix index instead of materializing d^d matrices
                let mut m = ReflectionMatrix::identity(spec.d);
                let mut rest = *index;
                for col in 0..spec.d {
                    let choice = rest % spec.d;
                    rest /= spec.d;
                    if choice > 0 {
                        let mut j = choice - 1;
                        if j >= col {
                            j += 1;
                        }
                        m.set_column(col, Some(j), spec.alpha[col]);
                    }
                }
                Ok(CompiledPolicy::Constant(m))
            }
            PolicyDescriptor::FeedbackArgmin { policy } => {
                if policy.d != spec.d || policy.alpha != spec.alpha {
                    return Err(Error::Constraint(
                        "feedback policy does not match the problem dimension/budgets".into(),
                    ));
                }
                Ok(CompiledPolicy::Feedback(policy))
            }
            PolicyDescriptor::FeedbackCallback { id } => match id.as_str() {
                "identity" => Ok(CompiledPolicy::Constant(ReflectionMatrix::identity(spec.d))),
                other => Err(Error::Config(format!("unknown policy callback {other:?}"))),
            },
        }
    }
}

/// Mean discounted cost with its sampling error and the analytic bound on
/// the truncated tail beyond the simulation horizon.
#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub tail_bound: f64,
}

/// I.i.d. Gaussian increments with variance `dt` per coordinate,
/// `grid.steps() × d`. The generator is pinned (ChaCha20 keyed by the seed,
/// ziggurat normal sampling), so a seed fully determines the output.
pub fn sample_brownian(grid: &TimeGrid, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = path_rng(seed, 0);
    let sd = grid.dt().sqrt();
    (0..grid.steps())
        .map(|_| {
            (0..d)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

fn path_rng(seed: u64, path: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Per-step view handed to path accumulators: everything needed for
/// left-point quadrature of the cost.
struct StepView<'a> {
    k: usize,
    t_left: f64,
    x_left: &'a [f64],
    x_right: &'a [f64],
    dy: &'a [f64],
    control: &'a ReflectionMatrix,
}

/// Drives one path with the given policy, calling `visit` once per step.
/// Returns the terminal state. All policies with the same `(seed, path)`
/// see identical increments.
fn run_path<F: FnMut(&StepView)>(
    spec: &ProblemSpec,
    x0: &[f64],
    policy: &CompiledPolicy,
    grid: &TimeGrid,
    seed: u64,
    path: u64,
    mut visit: F,
) -> Vec<f64> {
    let d = spec.d;
    let dt = grid.dt();
    let sd = dt.sqrt();
    let mut rng = path_rng(seed, path);
    let mut state = x0.to_vec();
    let mut x_left = vec![0.0; d];
    let mut dy = vec![0.0; d];
    let mut dwn = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut scratch = vec![0.0; 2 * d];
    let mut idx_scratch = vec![0usize; d];
    let mut feedback_m = ReflectionMatrix::identity(d);
    for k in 0..grid.steps() {
        for v in dwn.iter_mut() {
            *v = sd * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..d {
            dw[i] = (0..d).map(|j| spec.sigma[i][j] * dwn[j]).sum();
        }
        let control: &ReflectionMatrix = match policy {
            CompiledPolicy::Constant(m) => m,
            CompiledPolicy::Feedback(fp) => {
                fp.control_at(&state, &mut idx_scratch, &mut feedback_m);
                &feedback_m
            }
        };
        x_left.copy_from_slice(&state);
        controlled_step(spec, control, &mut state, &mut dy, &dw, dt, &mut scratch);
        visit(&StepView {
            k,
            t_left: k as f64 * dt,
            x_left: &x_left,
            x_right: &state,
            dy: &dy,
            control,
        });
    }
    state
}

/// Simulates one path and materializes the constrained pair together with
/// the realized control path (feedback policies are re-evaluated at every
/// grid point, matching piecewise-constant admissible controls).
pub fn simulate(
    spec: &ProblemSpec,
    x0: &[f64],
    policy: &PolicyDescriptor,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(PathPair, ControlPath)> {
    check_start(spec, x0)?;
    let compiled = CompiledPolicy::compile(spec, policy)?;
    let d = spec.d;
    let n = grid.len();
    let mut x = vec![vec![0.0; d]; n];
    let mut y = vec![vec![0.0; d]; n];
    x[0].copy_from_slice(x0);
    let mut controls = Vec::with_capacity(n - 1);
    run_path(spec, x0, &compiled, grid, seed, 0, |s| {
        for i in 0..d {
            x[s.k + 1][i] = s.x_right[i];
            y[s.k + 1][i] = y[s.k][i] + s.dy[i];
        }
        controls.push(s.control.clone());
    });
    Ok((
        PathPair {
            grid: grid.clone(),
            x,
            y,
            iterations: 0,
            final_distance: 0.0,
        },
        ControlPath {
            grid: grid.clone(),
            m: controls,
        },
    ))
}

/// Left-point quadrature of the discounted cost along a solved pair:
/// `Σ_k e^{−βt_k} [ℓ(x_k) dt + Σ_i (c·M(t_k) e_i)(y_i(t_{k+1}) − y_i(t_k))]`.
pub fn discounted_cost(pair: &PathPair, control: &ControlPath, spec: &ProblemSpec) -> Result<f64> {
    if !pair.grid.same_as(&control.grid) {
        return Err(Error::GridMismatch("pair and control grids differ".into()));
    }
    let dt = pair.grid.dt();
    let mut acc = 0.0;
    for k in 0..pair.grid.steps() {
        let disc = (-spec.beta * k as f64 * dt).exp();
        let mut step = spec.cost_at(&pair.x[k]) * dt;
        for i in 0..spec.d {
            let dyi = pair.y[k + 1][i] - pair.y[k][i];
            if dyi != 0.0 {
                step += control.m[k].dot_column(&spec.boundary_cost, i) * dyi;
            }
        }
        acc += disc * step;
    }
    Ok(acc)
}

struct PathOutcome {
    cost: f64,
    terminal_norm: f64,
}

fn cost_of_path(
    spec: &ProblemSpec,
    x0: &[f64],
    policy: &CompiledPolicy,
    grid: &TimeGrid,
    seed: u64,
    path: u64,
) -> PathOutcome {
    let dt = grid.dt();
    let beta = spec.beta;
    let has_boundary_cost = spec.boundary_cost.iter().any(|&c| c != 0.0);
    let mut acc = 0.0;
    let terminal = run_path(spec, x0, policy, grid, seed, path, |s| {
        let disc = (-beta * s.t_left).exp();
        let mut step = spec.cost_at(s.x_left) * dt;
        if has_boundary_cost {
            for i in 0..spec.d {
                if s.dy[i] != 0.0 {
                    step += s.control.dot_column(&spec.boundary_cost, i) * s.dy[i];
                }
            }
        }
        acc += disc * step;
    });
    PathOutcome {
        cost: acc,
        terminal_norm: terminal.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Per-policy cost estimates under common random numbers.
pub fn estimate_value_all(
    spec: &ProblemSpec,
    x0: &[f64],
    policies: &[PolicyDescriptor],
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<CostEstimate>> {
    check_start(spec, x0)?;
    if policies.is_empty() {
        return Err(Error::Precondition("policy list must be nonempty".into()));
    }
    if n_paths < 2 {
        return Err(Error::Precondition("n_paths must be >= 2".into()));
    }
    let compiled: Vec<CompiledPolicy> = policies
        .iter()
        .map(|p| CompiledPolicy::compile(spec, p))
        .collect::<Result<_>>()?;

    // path-major batch; the collect keeps aggregation in path-index order
    let outcomes: Vec<Vec<PathOutcome>> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            compiled
                .iter()
                .map(|pol| cost_of_path(spec, x0, pol, grid, seed, k as u64))
                .collect()
        })
        .collect();

    let horizon = grid.horizon();
    let mut out = Vec::with_capacity(compiled.len());
    for (pi, _) in compiled.iter().enumerate() {
        let mut sum = 0.0;
        let mut max_term: f64 = 0.0;
        for path in &outcomes {
            sum += path[pi].cost;
            max_term = max_term.max(path[pi].terminal_norm);
        }
        let mean = sum / n_paths as f64;
        let mut ss = 0.0;
        for path in &outcomes {
            let dev = path[pi].cost - mean;
            ss += dev * dev;
        }
        let std_error = (ss / (n_paths as f64 * (n_paths as f64 - 1.0))).sqrt();
        out.push(CostEstimate {
            mean,
            std_error,
            n_paths,
            horizon,
            tail_bound: tail_bound(spec, horizon, max_term),
        });
    }
    Ok(out)
}

/// Smallest mean discounted cost over the policy family: an upper bound on
/// `V(x0)` up to statistical error. Returns the winning policy with its
/// estimate.
pub fn estimate_value(
    spec: &ProblemSpec,
    x0: &[f64],
    policies: &[PolicyDescriptor],
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(PolicyDescriptor, CostEstimate)> {
    let all = estimate_value_all(spec, x0, policies, n_paths, grid, seed)?;
    let best = all
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean.partial_cmp(&b.1.mean).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok((policies[best].clone(), all.into_iter().nth(best).unwrap()))
}

/// Analytic bound on the cost mass beyond the horizon, following the growth
/// lemma's structure: the running-cost tail decays like
/// `e^{−βT} c_ℓ (1+|x̄|^m)/β` with `x̄` the largest observed terminal state,
/// and the boundary-cost tail carries the `1/(1−maxα)` reflection bound.
fn tail_bound(spec: &ProblemSpec, horizon: f64, max_terminal_norm: f64) -> f64 {
    let m = spec.cost.degree as i32;
    let run = spec.cost.constant / spec.beta * (1.0 + max_terminal_norm.powi(m));
    let c1: f64 = spec.boundary_cost.iter().map(|c| c.abs()).sum();
    let refl = if c1 > 0.0 {
        let a = spec.diffusion_a();
        let noise: f64 = (0..spec.d).map(|i| (2.0 * a[i][i] / spec.beta).sqrt()).sum();
        c1 / (1.0 - spec.max_alpha()) * (spec.drift_l1_bound() / spec.beta + noise)
    } else {
        0.0
    };
    (-spec.beta * horizon).exp() * (run + refl)
}

/// Oracle for `V(·)`, used by the dynamic-programming residual.
pub trait ValueOracle: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ValueOracle for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Monte Carlo estimate of the dynamic-programming defect
/// `| min_policy E[∫₀^{σ∧t} e^{−βs}(ℓ ds + h·dY) + e^{−β σ∧t} V(X_{σ∧t})] − V(x0) |`
/// with `σ` the first grid time the path leaves the ball `B_r(x0)`.
pub fn dpp_residual(
    spec: &ProblemSpec,
    x0: &[f64],
    r: f64,
    t: f64,
    policies: &[PolicyDescriptor],
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
    oracle: &dyn ValueOracle,
) -> Result<f64> {
    check_start(spec, x0)?;
    if !(r > 0.0) || !(t > 0.0) {
        return Err(Error::Precondition("r and t must be positive".into()));
    }
    if grid.horizon() + 1e-12 < t {
        return Err(Error::Precondition(
            "grid horizon must cover the stopping time t".into(),
        ));
    }
    let compiled: Vec<CompiledPolicy> = policies
        .iter()
        .map(|p| CompiledPolicy::compile(spec, p))
        .collect::<Result<_>>()?;
    let dt = grid.dt();
    let t_steps = ((t / dt).round() as usize).clamp(1, grid.steps());
    let has_boundary_cost = spec.boundary_cost.iter().any(|&c| c != 0.0);

    let sums: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            compiled
                .iter()
                .map(|pol| {
                    let mut acc = 0.0;
                    let mut stopped = false;
                    run_path(spec, x0, pol, grid, seed, k as u64, |s| {
                        if stopped || s.k >= t_steps {
                            return;
                        }
                        let disc = (-spec.beta * s.t_left).exp();
                        let mut step = spec.cost_at(s.x_left) * dt;
                        if has_boundary_cost {
                            for i in 0..spec.d {
                                if s.dy[i] != 0.0 {
                                    step += s.control.dot_column(&spec.boundary_cost, i) * s.dy[i];
                                }
                            }
                        }
                        acc += disc * step;
                        let t_right = (s.k + 1) as f64 * dt;
                        let dist: f64 = s
                            .x_right
                            .iter()
                            .zip(x0)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        if dist >= r || s.k + 1 == t_steps {
                            acc += (-spec.beta * t_right).exp() * oracle.value(s.x_right);
                            stopped = true;
                        }
                    });
                    acc
                })
                .collect()
        })
        .collect();

    let mut best = f64::INFINITY;
    for pi in 0..compiled.len() {
        let mean = sums.iter().map(|p| p[pi]).sum::<f64>() / n_paths as f64;
        best = best.min(mean);
    }
    Ok((best - oracle.value(x0)).abs())
}

/// Empirical `P(σ_r ≤ t)`: fraction of paths leaving `B_r(x0)` by time `t`
/// on the grid.
pub fn exit_probability(
    spec: &ProblemSpec,
    x0: &[f64],
    r: f64,
    t: f64,
    policy: &PolicyDescriptor,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<f64> {
    check_start(spec, x0)?;
    if !(r > 0.0) || !(t > 0.0) {
        return Err(Error::Precondition("r and t must be positive".into()));
    }
    let compiled = CompiledPolicy::compile(spec, policy)?;
    let dt = grid.dt();
    let t_steps = ((t / dt).round() as usize).clamp(1, grid.steps());
    let exits: usize = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let mut exited = false;
            run_path(spec, x0, &compiled, grid, seed, k as u64, |s| {
                if exited || s.k >= t_steps {
                    return;
                }
                let dist: f64 = s
                    .x_right
                    .iter()
                    .zip(x0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist >= r {
                    exited = true;
                }
            });
            exited as usize
        })
        .sum();
    Ok(exits as f64 / n_paths as f64)
}

/// Terminal states of `n_paths` independent paths under a fixed constant
/// control (not necessarily a vertex). Used by the heavy-traffic
/// comparison, where the limiting control matrix carries the committed
/// help fractions.
pub fn terminal_samples(
    spec: &ProblemSpec,
    x0: &[f64],
    control: &ReflectionMatrix,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_start(spec, x0)?;
    control.validate(&spec.alpha)?;
    let compiled = CompiledPolicy::Constant(control.clone());
    Ok((0..n_paths)
        .into_par_iter()
        .map(|k| run_path(spec, x0, &compiled, grid, seed, k as u64, |_| {}))
        .collect())
}

fn check_start(spec: &ProblemSpec, x0: &[f64]) -> Result<()> {
    if x0.len() != spec.d {
        return Err(Error::Dimension {
            expected: spec.d,
            got: x0.len(),
        });
    }
    if x0.iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition("x0 must be in the orthant".into()));
    }
    Ok(())
}

/// Driver reconstruction for cross-checks: the cumulative `Σ W` path a seed
/// produces, as a [`DrivingPath`].
pub fn driver_from_seed(spec: &ProblemSpec, x0: &[f64], grid: &TimeGrid, seed: u64) -> DrivingPath {
    let d = spec.d;
    let incs = sample_brownian(grid, d, seed);
    let mut w = vec![vec![0.0; d]; grid.len()];
    for k in 0..grid.steps() {
        for i in 0..d {
            let dwi: f64 = (0..d).map(|j| spec.sigma[i][j] * incs[k][j]).sum();
            w[k + 1][i] = w[k][i] + dwi;
        }
    }
    DrivingPath {
        grid: grid.clone(),
        w,
        x0: x0.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, Drift, RunningCost};

    fn spec1d(cost: RunningCost, degree: u32) -> ProblemSpec {
        ProblemSpec {
            d: 1,
            alpha: vec![0.0],
            drift: Drift::Constant { value: vec![0.0] },
            sigma: vec![vec![1.0]],
            beta: 1.0,
            cost: CostSpec {
                kind: cost,
                degree,
                constant: 1.0,
            },
            boundary_cost: vec![0.0],
            lipschitz_bound: 1e-6,
        }
    }

    #[test]
    fn brownian_sampling_is_deterministic_and_calibrated() {
        let grid = TimeGrid::uniform(1e-3, 100_000).unwrap();
        let a = sample_brownian(&grid, 1, 42);
        let b = sample_brownian(&grid, 1, 42);
        assert_eq!(a, b);

        let n = a.len() as f64;
        let mean = a.iter().map(|v| v[0]).sum::<f64>() / n;
        assert!(mean.abs() <= 4.0 * (1e-3 / n).sqrt(), "mean {mean}");
        let var = a.iter().map(|v| v[0] * v[0]).sum::<f64>() / n - mean * mean;
        assert!((var - 1e-3).abs() <= 0.05 * 1e-3, "var {var}");
    }

    #[test]
    fn reflected_path_stays_in_orthant() {
        let spec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        let grid = TimeGrid::uniform(1e-2, 300).unwrap();
        let (pair, _) = simulate(&spec, &[5.0], &PolicyDescriptor::identity(), &grid, 9).unwrap();
        assert!(pair.x.iter().all(|x| x[0] >= 0.0));
        assert!(pair.y.windows(2).all(|w| w[1][0] >= w[0][0]));
    }

    #[test]
    fn deterministic_drift_hits_wall_then_pushes() {
        // zero noise injected via a test driver: b = (−1, 0), x0 = (1, 1)
        let mut spec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        spec.d = 2;
        spec.alpha = vec![0.0, 0.0];
        spec.drift = Drift::Constant {
            value: vec![-1.0, 0.0],
        };
        spec.sigma = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        spec.cost = CostSpec {
            kind: RunningCost::Linear { w: vec![0.0, 0.0] },
            degree: 1,
            constant: 1.0,
        };
        spec.boundary_cost = vec![0.0, 0.0];
        spec.lipschitz_bound = 1.0;
        let grid = TimeGrid::uniform(0.01, 200).unwrap();
        let driver = DrivingPath {
            grid: grid.clone(),
            w: vec![vec![0.0; 2]; grid.len()],
            x0: vec![1.0, 1.0],
        };
        let control =
            ControlPath::constant(grid.clone(), ReflectionMatrix::identity(2));
        let pair = crate::skorokhod::solve_causal(&driver, &control, &spec).unwrap();
        for (k, &t) in grid.times().iter().enumerate() {
            let expect_x = (1.0 - t).max(0.0);
            let expect_y = (t - 1.0).max(0.0);
            assert!((pair.x[k][0] - expect_x).abs() <= 1e-10);
            assert!((pair.y[k][0] - expect_y).abs() <= 1e-10);
            assert!((pair.x[k][1] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn discounted_cost_geometric_series() {
        let spec = spec1d(
            RunningCost::Quadratic {
                q: vec![vec![0.0]],
                w: vec![0.0],
                k: 1.0,
            },
            0,
        );
        let grid = TimeGrid::uniform(0.01, 500).unwrap();
        let n = grid.len();
        let pair = PathPair {
            grid: grid.clone(),
            x: vec![vec![3.0]; n],
            y: vec![vec![0.0]; n],
            iterations: 0,
            final_distance: 0.0,
        };
        let control = ControlPath::constant(grid.clone(), ReflectionMatrix::identity(1));
        let got = discounted_cost(&pair, &control, &spec).unwrap();
        // Σ_{k<n} e^{−β k dt} dt = dt (1 − e^{−β n dt})/(1 − e^{−β dt})
        let dt = 0.01;
        let steps = grid.steps() as f64;
        let expect = dt * (1.0 - (-dt * steps).exp()) / (1.0 - (-dt as f64).exp());
        assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");

        // ℓ ≡ 0 and c = 0 ⇒ zero cost
        let zero_spec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        assert_eq!(discounted_cost(&pair, &control, &zero_spec).unwrap(), 0.0);

        // pure boundary cost with Y(t) = t mirrors the same series
        let mut yspec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        yspec.boundary_cost = vec![1.0];
        let ramp = PathPair {
            grid: grid.clone(),
            x: vec![vec![0.0]; n],
            y: grid.times().iter().map(|&t| vec![t]).collect(),
            iterations: 0,
            final_distance: 0.0,
        };
        let got = discounted_cost(&ramp, &control, &yspec).unwrap();
        assert!((got - expect).abs() <= 1e-12);
    }

    #[test]
    fn common_random_numbers_are_bitwise() {
        let spec = spec1d(
            RunningCost::Quadratic {
                q: vec![vec![1.0]],
                w: vec![0.0],
                k: 0.0,
            },
            2,
        );
        let grid = TimeGrid::uniform(1e-2, 100).unwrap();
        let (a, _) = simulate(&spec, &[2.0], &PolicyDescriptor::identity(), &grid, 5).unwrap();
        let (b, _) = simulate(
            &spec,
            &[2.0],
            &PolicyDescriptor::FeedbackCallback {
                id: "identity".into(),
            },
            &grid,
            5,
        )
        .unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);

        // all-zero feedback field reduces to the identity policy, bitwise
        let fp = FeedbackPolicy::all_zero(1, vec![0.0]);
        let (c, _) = simulate(
            &spec,
            &[2.0],
            &PolicyDescriptor::FeedbackArgmin { policy: fp },
            &grid,
            5,
        )
        .unwrap();
        assert_eq!(a.x, c.x);
    }

    #[test]
    fn estimate_value_on_quadratic_instance() {
        // V(x) = x² + 1 for b = 0, Σ = 1, β = 1, ℓ = x²
        let spec = spec1d(
            RunningCost::Quadratic {
                q: vec![vec![1.0]],
                w: vec![0.0],
                k: 0.0,
            },
            2,
        );
        let grid = TimeGrid::from_horizon(12.0, 1e-3).unwrap();
        let policies = vec![PolicyDescriptor::identity()];
        let (_, est) = estimate_value(&spec, &[0.0], &policies, 2000, &grid, 77).unwrap();
        assert!(
            (est.mean - 1.0).abs() <= 3.0 * est.std_error + 0.02,
            "mean {} se {}",
            est.mean,
            est.std_error
        );
        let (_, est2) = estimate_value(&spec, &[2.0], &policies, 2000, &grid, 77).unwrap();
        assert!(
            (est2.mean - 5.0).abs() <= 3.0 * est2.std_error + 0.05,
            "mean {} se {}",
            est2.mean,
            est2.std_error
        );
        assert!(est.tail_bound <= 0.01 * est.mean);

        // ℓ ≡ 0, c = 0 ⇒ exactly zero for every policy
        let zspec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        let all = estimate_value_all(&zspec, &[1.0], &policies, 10, &grid, 3).unwrap();
        assert_eq!(all[0].mean, 0.0);
    }

    #[test]
    fn exit_probability_monotone_and_small() {
        let spec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        let grid = TimeGrid::from_horizon(0.2, 1e-3).unwrap();
        let pol = PolicyDescriptor::identity();
        // far radius, one step: the Gaussian tail bound P(|W(dt)| ≥ 10) is
        // astronomically small, so no path exits
        let p = exit_probability(&spec, &[10.0], 10.0, 1e-3, &pol, 2000, &grid, 21).unwrap();
        assert_eq!(p, 0.0);
        // tiny radius: any motion exits after one step
        let p = exit_probability(&spec, &[10.0], 1e-6, 1e-3, &pol, 500, &grid, 21).unwrap();
        assert!(p >= 0.99);
        // nested events under common random numbers
        let p1 = exit_probability(&spec, &[10.0], 0.5, 0.05, &pol, 2000, &grid, 21).unwrap();
        let p2 = exit_probability(&spec, &[10.0], 0.5, 0.2, &pol, 2000, &grid, 21).unwrap();
        assert!(p1 <= p2);
    }

    #[test]
    fn dpp_residual_trivial_cases() {
        let spec = spec1d(RunningCost::Linear { w: vec![0.0] }, 1);
        let grid = TimeGrid::from_horizon(1.0, 1e-3).unwrap();
        let policies = vec![PolicyDescriptor::identity()];
        // ℓ ≡ 0, c = 0, huge radius: residual vanishes only if the oracle is
        // consistent, and V ≡ 0 is the exact value function here
        let oracle = |_: &[f64]| 0.0;
        let r = dpp_residual(
            &spec, &[5.0], 1e6, 0.5, &policies, 200, &grid, 31, &oracle,
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }
}
