//! Problem instance and boundary Hamiltonians.
//!
//! A [`ProblemSpec`] bundles the data of the controlled reflected diffusion
//! in the nonnegative orthant:
//!
//! ```text
//! dX = b(X) dt + Σ dW + v(t) dY,    X ≥ 0, Y nondecreasing, ∫ X_i dY_i = 0,
//! ```
//!
//! where the reflection control `v` takes values in the compact set
//! `M(α) = { M = I − P : P_ii = 0, P_ij ≥ 0, Σ_{j≠i} P_ji ≤ α_i }`.
//! Column `i` of `M` is the direction in which the state is pushed when the
//! face `x_i = 0` is hit: pushing coordinate `i` up by `dY_i` drags every
//! other coordinate `j` down by `P_ji dY_i`.
//!
//! The boundary Hamiltonian for the linear boundary-cost family
//! `h_i(M) = c·M e_i` is
//!
//! ```text
//! H_i(p) = min_{M ∈ M(α)} (p + c)·M e_i = q_i − α_i max_{j≠i} q_j⁺,   q = p + c,
//! ```
//!
//! because the objective is linear in the column `P_{·i}` and the feasible
//! set is a scaled simplex, so a minimizing vertex puts the whole budget
//! `α_i` on the largest positive `q_j` (or pushes nothing). The brute-force
//! grid minimizer [`hamiltonian_bruteforce`] is kept as an independent
//! oracle for that closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift descriptor. All variants are bounded by construction or by the
/// declared clamp, which is what makes the declared Lipschitz bound honest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Drift {
    Constant { value: Vec<f64> },
    /// `b(x) = clamp(b0 + B x, −clamp, clamp)` componentwise.
    AffineSaturated {
        b0: Vec<f64>,
        matrix: Vec<Vec<f64>>,
        clamp: f64,
    },
    /// Named builtin drift; the only registered id is `"zero"`.
    Callback { id: String },
}

impl Drift {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Constant { value } => out.copy_from_slice(value),
            Drift::AffineSaturated { b0, matrix, clamp } => {
                for i in 0..out.len() {
                    let mut v = b0[i];
                    for (j, &xj) in x.iter().enumerate() {
                        v += matrix[i][j] * xj;
                    }
                    out[i] = v.clamp(-*clamp, *clamp);
                }
            }
            Drift::Callback { id } => match id.as_str() {
                "zero" => out.fill(0.0),
                other => panic!("unknown drift callback id {other:?}"),
            },
        }
    }

    fn check_shape(&self, d: usize) -> Result<()> {
        let len = match self {
            Drift::Constant { value } => value.len(),
            Drift::AffineSaturated { b0, matrix, .. } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension {
                        expected: d,
                        got: matrix.len(),
                    });
                }
                b0.len()
            }
            Drift::Callback { id } => {
                if id != "zero" {
                    return Err(Error::Config(format!("unknown drift callback id {id:?}")));
                }
                d
            }
        };
        if len != d {
            return Err(Error::Dimension {
                expected: d,
                got: len,
            });
        }
        Ok(())
    }

    /// Sum over coordinates of the per-coordinate sup of |b_i|; the `|b|_1`
    /// entering the pathwise reflection bound. Exact for constant drift,
    /// a declared bound otherwise.
    pub fn l1_bound(&self, d: usize, lipschitz_bound: f64) -> f64 {
        match self {
            Drift::Constant { value } => value.iter().map(|v| v.abs()).sum(),
            Drift::AffineSaturated { clamp, .. } => d as f64 * clamp.min(lipschitz_bound),
            Drift::Callback { id } if id == "zero" => 0.0,
            Drift::Callback { .. } => d as f64 * lipschitz_bound,
        }
    }
}

/// One term `coef · Π_i x_i^{powers[i]}` of a monomial-sum cost.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunningCost {
    /// `ℓ(x) = w·x`
    Linear { w: Vec<f64> },
    /// `ℓ(x) = xᵀ Q x + w·x + k`
    Quadratic {
        q: Vec<Vec<f64>>,
        w: Vec<f64>,
        k: f64,
    },
    MonomialSum { terms: Vec<Monomial> },
}

/// Running cost descriptor with its declared polynomial growth envelope
/// `0 ≤ ℓ(x) ≤ constant · (1 + |x|^degree)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostSpec {
    #[serde(flatten)]
    pub kind: RunningCost,
    /// Growth degree `m`.
    pub degree: u32,
    /// Growth constant `c_ℓ`.
    pub constant: f64,
}

impl CostSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            RunningCost::Linear { w } => w.iter().zip(x).map(|(wi, xi)| wi * xi).sum(),
            RunningCost::Quadratic { q, w, k } => {
                let mut v = *k;
                for (i, &xi) in x.iter().enumerate() {
                    v += w[i] * xi;
                    for (j, &xj) in x.iter().enumerate() {
                        v += q[i][j] * xi * xj;
                    }
                }
                v
            }
            RunningCost::MonomialSum { terms } => terms
                .iter()
                .map(|t| {
                    t.coef
                        * t.powers
                            .iter()
                            .zip(x)
                            .map(|(&p, &xi)| xi.powi(p as i32))
                            .product::<f64>()
                })
                .sum(),
        }
    }

    fn check_shape(&self, d: usize) -> Result<()> {
        let ok = match &self.kind {
            RunningCost::Linear { w } => w.len() == d,
            RunningCost::Quadratic { q, w, .. } => {
                w.len() == d && q.len() == d && q.iter().all(|r| r.len() == d)
            }
            RunningCost::MonomialSum { terms } => terms.iter().all(|t| t.powers.len() == d),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension { expected: d, got: 0 })
        }
    }
}

/// Full instance of the control problem.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemSpec {
    /// State dimension.
    pub d: usize,
    /// Reflection budgets, each in `[0, 1)`.
    pub alpha: Vec<f64>,
    pub drift: Drift,
    /// Diffusion matrix Σ, row major.
    pub sigma: Vec<Vec<f64>>,
    /// Discount rate β > 0.
    pub beta: f64,
    pub cost: CostSpec,
    /// Linear boundary cost vector `c`; `h_i(M) = c·M e_i`. All-zero means h ≡ 0.
    pub boundary_cost: Vec<f64>,
    /// Declared bound `K` for Condition 1 (`|b| ≤ K`, Lipschitz constant of b).
    pub lipschitz_bound: f64,
}

impl ProblemSpec {
    /// Checks field shapes only; the numeric conditions are the job of
    /// [`validate_problem`].
    pub fn check_shape(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Constraint("dimension d must be positive".into()));
        }
        for (name, len) in [
            ("alpha", self.alpha.len()),
            ("boundary_cost", self.boundary_cost.len()),
            ("sigma rows", self.sigma.len()),
        ] {
            if len != d {
                return Err(Error::Constraint(format!(
                    "{name} has length {len}, expected {d}"
                )));
            }
        }
        if self.sigma.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: self.sigma.iter().map(|r| r.len()).max().unwrap_or(0),
            });
        }
        self.drift.check_shape(d)?;
        self.cost.check_shape(d)?;
        if !(self.beta > 0.0) {
            return Err(Error::Constraint("beta must be positive".into()));
        }
        if !(self.lipschitz_bound > 0.0) {
            return Err(Error::Constraint("lipschitz_bound must be positive".into()));
        }
        Ok(())
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().cloned().fold(0.0, f64::max)
    }

    /// `A = Σ Σᵀ`, row major.
    pub fn diffusion_a(&self) -> Vec<Vec<f64>> {
        let d = self.d;
        let mut a = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                a[i][j] = (0..d).map(|k| self.sigma[i][k] * self.sigma[j][k]).sum();
            }
        }
        a
    }

    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval(x, out);
    }

    pub fn cost_at(&self, x: &[f64]) -> f64 {
        self.cost.eval(x)
    }

    /// `Σ_i sup |b_i|`, used by the reflection bound report.
    pub fn drift_l1_bound(&self) -> f64 {
        self.drift.l1_bound(self.d, self.lipschitz_bound)
    }
}

/// Element of `M(α)`, stored as the nonnegative part `P` (row major);
/// the encoded control matrix is `M = I − P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionMatrix {
    d: usize,
    p: Vec<f64>,
}

impl ReflectionMatrix {
    /// `P = 0`, i.e. `M = I`: plain normal reflection.
    pub fn identity(d: usize) -> Self {
        ReflectionMatrix {
            d,
            p: vec![0.0; d * d],
        }
    }

    pub fn from_p(p: Vec<Vec<f64>>) -> Result<Self> {
        let d = p.len();
        if p.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension { expected: d, got: 0 });
        }
        let mut flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                flat[i * d + j] = p[i][j];
            }
        }
        Ok(ReflectionMatrix { d, p: flat })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `P_{row,col}`.
    #[inline]
    pub fn p(&self, row: usize, col: usize) -> f64 {
        self.p[row * self.d + col]
    }

    /// `M_{row,col} = δ − P_{row,col}`.
    #[inline]
    pub fn m(&self, row: usize, col: usize) -> f64 {
        (if row == col { 1.0 } else { 0.0 }) - self.p(row, col)
    }

    /// Overwrite column `col` of `P` with `α · e_target` (or zero).
    pub fn set_column(&mut self, col: usize, target: Option<usize>, alpha: f64) {
        for row in 0..self.d {
            self.p[row * self.d + col] = 0.0;
        }
        if let Some(j) = target {
            self.p[j * self.d + col] = alpha;
        }
    }

    /// `v·M e_col` for a row vector `v`.
    pub fn dot_column(&self, v: &[f64], col: usize) -> f64 {
        let mut acc = v[col];
        for row in 0..self.d {
            let pij = self.p(row, col);
            if pij != 0.0 {
                acc -= pij * v[row];
            }
        }
        acc
    }

    /// Membership in `M(α)`: zero diagonal, nonnegative entries, column sums
    /// within budget.
    pub fn validate(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: alpha.len(),
            });
        }
        for i in 0..self.d {
            if self.p(i, i) != 0.0 {
                return Err(Error::Constraint(format!("P[{i}][{i}] must be zero")));
            }
            let mut colsum = 0.0;
            for j in 0..self.d {
                let v = self.p(j, i);
                if v < 0.0 {
                    return Err(Error::Constraint(format!("P[{j}][{i}] = {v} is negative")));
                }
                if j != i {
                    colsum += v;
                }
            }
            if colsum > alpha[i] + 1e-12 {
                return Err(Error::Constraint(format!(
                    "column {i} sum {colsum} exceeds budget alpha[{i}] = {}",
                    alpha[i]
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of a single validation check.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Worst witness point, when the check is sample based.
    pub worst: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ConditionCheck>,
    pub usable: bool,
}

impl ValidationReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Smallest singular value of Σ must exceed this for `A = ΣΣᵀ` to count as
/// nonsingular.
pub const SIGMA_MIN_SINGULAR: f64 = 1e-10;

/// Checks Conditions 1–3 on the instance by random sampling in `[0, 50]^d`.
///
/// Condition 3 (the intersection non-emptiness used for the subsolution
/// property) has no generic algorithmic check; it holds structurally for the
/// linear family `h_i(M) = c·M e_i` because `h_i` depends only on column `i`
/// of `M`, which is the only family this type can express.
pub fn validate_problem(
    spec: &ProblemSpec,
    sample_count: usize,
    seed: u64,
) -> Result<ValidationReport> {
    spec.check_shape()?;
    if sample_count == 0 {
        return Err(Error::Precondition("sample_count must be >= 1".into()));
    }
    let d = spec.d;
    let mut checks = Vec::new();

    // Condition 2: max_i alpha_i < 1, entries nonnegative.
    {
        let mut passed = true;
        let mut detail = String::from("max_i alpha_i < 1");
        for (i, &a) in spec.alpha.iter().enumerate() {
            if !(0.0..1.0).contains(&a) {
                passed = false;
                detail = format!("alpha[{i}] = {a} violates 0 <= alpha < 1");
                break;
            }
        }
        checks.push(ConditionCheck {
            name: "condition-2-alpha".into(),
            passed,
            detail,
            worst: None,
        });
    }

    // Condition 1b: A = Σ Σᵀ nonsingular.
    {
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| spec.sigma[i][j]);
        let smin = m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
        let passed = smin > SIGMA_MIN_SINGULAR;
        checks.push(ConditionCheck {
            name: "condition-1-sigma-nonsingular".into(),
            passed,
            detail: format!("smallest singular value of Sigma = {smin:.3e}"),
            worst: None,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(0.0..50.0)).collect()
    };

    // Condition 1a: |b(x)| <= K and |b(x) − b(y)| <= K |x − y| on sampled pairs.
    {
        let k = spec.lipschitz_bound;
        let mut worst: Option<Vec<f64>> = None;
        let mut worst_excess = 0.0;
        let mut bx = vec![0.0; d];
        let mut by = vec![0.0; d];
        for _ in 0..sample_count {
            let x = sample(&mut rng);
            let y = sample(&mut rng);
            spec.drift_at(&x, &mut bx);
            spec.drift_at(&y, &mut by);
            let nb = bx.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dxy = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let dbxy = bx
                .iter()
                .zip(&by)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let excess = (nb - k).max(dbxy - k * dxy);
            if excess > worst_excess {
                worst_excess = excess;
                worst = Some(x.clone());
            }
        }
        checks.push(ConditionCheck {
            name: "condition-1-drift-bounded-lipschitz".into(),
            passed: worst_excess <= 1e-9,
            detail: format!("worst excess over declared K = {worst_excess:.3e}"),
            worst,
        });
    }

    // Running cost: 0 <= l(x) <= c_l (1 + |x|^m) at every sampled point.
    {
        let m = spec.cost.degree as i32;
        let cl = spec.cost.constant;
        let mut worst: Option<Vec<f64>> = None;
        let mut worst_excess = 0.0;
        for _ in 0..sample_count {
            let x = sample(&mut rng);
            let l = spec.cost_at(&x);
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let envelope = cl * (1.0 + nx.powi(m));
            let excess = (-l).max(l - envelope);
            if excess > worst_excess {
                worst_excess = excess;
                worst = Some(x);
            }
        }
        checks.push(ConditionCheck {
            name: "cost-growth-envelope".into(),
            passed: worst_excess <= 1e-9,
            detail: format!("worst envelope excess = {worst_excess:.3e}"),
            worst,
        });
    }

    // Condition 3: structural for the linear boundary-cost family.
    checks.push(ConditionCheck {
        name: "condition-3-structural".into(),
        passed: true,
        detail: "h_i(M) = c·M e_i depends only on column i of M".into(),
        worst: None,
    });

    let usable = checks.iter().all(|c| c.passed);
    Ok(ValidationReport { checks, usable })
}

/// Closed-form boundary Hamiltonian on the shifted gradient `q = p + c`:
/// `q_i − α_i max_{j≠i} q_j⁺`. For `d = 1` the max over the empty set is 0
/// and the value reduces to `q_1`, matching the singleton `M(α) = {I}`.
#[inline]
pub fn hamiltonian_on_shifted(alpha: &[f64], i: usize, q: &[f64]) -> f64 {
    let mut mx = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        if j != i && qj > mx {
            mx = qj;
        }
    }
    q[i] - alpha[i] * mx
}

/// `H_i(p) = min_{M ∈ M(α)} { p·M e_i + h_i(M) }` for the linear family,
/// evaluated in closed form. Deterministic, no tolerance.
pub fn hamiltonian(spec: &ProblemSpec, i: usize, p: &[f64]) -> Result<f64> {
    check_index(spec, i, p)?;
    let q: Vec<f64> = p
        .iter()
        .zip(&spec.boundary_cost)
        .map(|(pi, ci)| pi + ci)
        .collect();
    Ok(hamiltonian_on_shifted(&spec.alpha, i, &q))
}

/// A vertex matrix attaining `H_i(p)`: if `max_{j≠i} q_j⁺ > 0` with smallest
/// maximizer `j*`, the column puts the whole budget there (`P_{j*,i} = α_i`);
/// otherwise the column is zero. Only column `i` is meaningful.
pub fn hamiltonian_argmin(spec: &ProblemSpec, i: usize, p: &[f64]) -> Result<ReflectionMatrix> {
    check_index(spec, i, p)?;
    let target = argmin_target(spec, i, p);
    let mut m = ReflectionMatrix::identity(spec.d);
    m.set_column(i, target, spec.alpha[i]);
    Ok(m)
}

/// The push target behind [`hamiltonian_argmin`], without building a matrix.
pub fn argmin_target(spec: &ProblemSpec, i: usize, p: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut mx = 0.0;
    for j in 0..spec.d {
        if j == i {
            continue;
        }
        let qj = p[j] + spec.boundary_cost[j];
        // strict > keeps the smallest index on ties
        if qj > mx {
            mx = qj;
            best = Some(j);
        }
    }
    best
}

/// Grid minimizer of `(p + c)·M e_i` over a simplex discretization of the
/// feasible column, vertices included. Serves as the oracle for
/// [`hamiltonian`]: a linear objective attains its minimum at a vertex, so
/// the two agree exactly.
pub fn hamiltonian_bruteforce(
    spec: &ProblemSpec,
    i: usize,
    p: &[f64],
    grid_per_entry: usize,
) -> Result<f64> {
    check_index(spec, i, p)?;
    if grid_per_entry < 2 {
        return Err(Error::Precondition("grid_per_entry must be >= 2".into()));
    }
    let d = spec.d;
    let q: Vec<f64> = p
        .iter()
        .zip(&spec.boundary_cost)
        .map(|(pi, ci)| pi + ci)
        .collect();
    let others: Vec<usize> = (0..d).filter(|&j| j != i).collect();
    let alpha_i = spec.alpha[i];

    // Vertices first: the zero column and the full budget on each j != i.
    let mut best = q[i];
    for &j in &others {
        let v = q[i] - alpha_i * q[j];
        if v < best {
            best = v;
        }
    }

    // Simplex grid: nonnegative integer weights summing to at most g−1.
    let g = grid_per_entry - 1;
    let mut weights = vec![0usize; others.len()];
    loop {
        let total: usize = weights.iter().sum();
        if total <= g {
            let mut v = q[i];
            for (w, &j) in weights.iter().zip(&others) {
                if *w > 0 {
                    v -= alpha_i * (*w as f64 / g as f64) * q[j];
                }
            }
            if v < best {
                best = v;
            }
        }
        // mixed-radix increment with early skip of infeasible tails
        let mut k = 0;
        loop {
            if k == weights.len() {
                return Ok(best);
            }
            weights[k] += 1;
            if weights.iter().sum::<usize>() <= g {
                break;
            }
            weights[k] = 0;
            k += 1;
        }
    }
}

/// All matrices whose column `i` is either zero or `α_i e_j` for one
/// `j ≠ i`; `d` choices per column, `d^d` matrices in all. Index 0 is the
/// identity (`P = 0`). Ordering is a little-endian mixed-radix counter over
/// columns, so it is stable across runs.
pub fn vertex_matrices(spec: &ProblemSpec) -> Vec<ReflectionMatrix> {
    let d = spec.d;
    let total = d.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut m = ReflectionMatrix::identity(d);
        let mut rest = idx;
        for col in 0..d {
            let choice = rest % d;
            rest /= d;
            if choice > 0 {
                // choices 1..d map to the targets j != col in ascending order
                let mut j = choice - 1;
                if j >= col {
                    j += 1;
                }
                m.set_column(col, Some(j), spec.alpha[col]);
            }
        }
        out.push(m);
    }
    out
}

fn check_index(spec: &ProblemSpec, i: usize, p: &[f64]) -> Result<()> {
    if i >= spec.d {
        return Err(Error::IndexOutOfRange { index: i, d: spec.d });
    }
    if p.len() != spec.d {
        return Err(Error::Dimension {
            expected: spec.d,
            got: p.len(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("gradient must be finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec_with(d: usize, alpha: Vec<f64>, c: Vec<f64>) -> ProblemSpec {
        ProblemSpec {
            d,
            alpha,
            drift: Drift::Constant { value: vec![0.0; d] },
            sigma: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            beta: 1.0,
            cost: CostSpec {
                kind: RunningCost::Quadratic {
                    q: (0..d)
                        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect(),
                    w: vec![0.0; d],
                    k: 0.0,
                },
                degree: 2,
                constant: 1.0,
            },
            boundary_cost: c,
            lipschitz_bound: 1.0,
        }
    }

    #[test]
    fn hamiltonian_closed_form_examples() {
        let spec = spec_with(2, vec![0.5, 0.5], vec![0.0, 0.0]);
        assert_eq!(hamiltonian(&spec, 0, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(&spec, 0, &[3.0, -5.0]).unwrap(), 3.0);
        let spec1 = spec_with(1, vec![0.0], vec![0.0]);
        assert_eq!(hamiltonian(&spec1, 0, &[-2.0]).unwrap(), -2.0);
    }

    #[test]
    fn hamiltonian_index_out_of_range() {
        let spec = spec_with(2, vec![0.5, 0.5], vec![0.0, 0.0]);
        assert!(matches!(
            hamiltonian(&spec, 2, &[0.0, 0.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn argmin_examples() {
        let spec = spec_with(2, vec![0.5, 0.5], vec![0.0, 0.0]);
        let m = hamiltonian_argmin(&spec, 0, &[1.0, 2.0]).unwrap();
        assert_eq!(m.p(1, 0), 0.5);
        assert_eq!(m.p(0, 1), 0.0);
        let m = hamiltonian_argmin(&spec, 0, &[3.0, -5.0]).unwrap();
        assert_eq!(m, ReflectionMatrix::identity(2));

        // tie between j = 1 and j = 2 breaks toward the smaller index
        let spec3 = spec_with(3, vec![0.3, 0.5, 0.7], vec![0.0; 3]);
        let m = hamiltonian_argmin(&spec3, 0, &[0.0, 4.0, 4.0]).unwrap();
        assert_eq!(m.p(1, 0), 0.3);
        assert_eq!(m.p(2, 0), 0.0);
    }

    #[test]
    fn argmin_satisfies_constraints_and_reproduces_minimum() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for d in [2usize, 3, 4] {
            let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..0.95)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = spec_with(d, alpha.clone(), c);
            for _ in 0..200 {
                let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let i = rng.gen_range(0..d);
                let m = hamiltonian_argmin(&spec, i, &p).unwrap();
                m.validate(&alpha).unwrap();
                let q: Vec<f64> = p
                    .iter()
                    .zip(&spec.boundary_cost)
                    .map(|(a, b)| a + b)
                    .collect();
                let plugged = m.dot_column(&q, i);
                let h = hamiltonian(&spec, i, &p).unwrap();
                assert!((plugged - h).abs() <= 1e-12, "plugged {plugged} vs {h}");
            }
        }
    }

    #[test]
    fn bruteforce_matches_closed_form_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for d in [1usize, 2, 3, 4] {
            let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..0.95)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = spec_with(d, alpha, c);
            for _ in 0..100 {
                let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let i = rng.gen_range(0..d);
                for g in [2usize, 3, 5] {
                    let bf = hamiltonian_bruteforce(&spec, i, &p, g).unwrap();
                    let h = hamiltonian(&spec, i, &p).unwrap();
                    assert_eq!(bf, h, "d={d} i={i} g={g} p={p:?}");
                }
            }
        }
    }

    #[test]
    fn homogeneity_concavity_monotonicity() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let spec = spec_with(3, vec![0.3, 0.5, 0.7], vec![0.0; 3]);
        for _ in 0..500 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let pp: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let i = rng.gen_range(0..3);
            let lam = rng.gen_range(0.0..3.0);
            let scaled: Vec<f64> = p.iter().map(|v| lam * v).collect();
            let h = hamiltonian(&spec, i, &p).unwrap();
            assert!((hamiltonian(&spec, i, &scaled).unwrap() - lam * h).abs() <= 1e-12);

            let mid: Vec<f64> = p.iter().zip(&pp).map(|(a, b)| 0.5 * (a + b)).collect();
            let hm = hamiltonian(&spec, i, &mid).unwrap();
            let hp = hamiltonian(&spec, i, &pp).unwrap();
            assert!(hm >= 0.5 * (h + hp) - 1e-12);

            let t = rng.gen_range(0.0..4.0);
            let mut shifted = p.clone();
            shifted[i] += t;
            assert!((hamiltonian(&spec, i, &shifted).unwrap() - (h + t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn vertex_matrix_counts() {
        for (d, expect) in [(1usize, 1usize), (2, 4), (3, 27)] {
            let spec = spec_with(d, vec![0.5; d], vec![0.0; d]);
            let ms = vertex_matrices(&spec);
            assert_eq!(ms.len(), expect);
            assert_eq!(ms[0], ReflectionMatrix::identity(d));
            for m in &ms {
                m.validate(&spec.alpha).unwrap();
            }
        }
    }

    #[test]
    fn validation_passes_on_degenerate_1d_instance() {
        let spec = spec_with(1, vec![0.0], vec![0.0]);
        let report = validate_problem(&spec, 200, 1).unwrap();
        assert!(report.usable, "{:?}", report.checks);
    }

    #[test]
    fn validation_rejects_alpha_at_one() {
        let spec = spec_with(2, vec![0.5, 1.0], vec![0.0; 2]);
        let report = validate_problem(&spec, 10, 1).unwrap();
        assert!(!report.usable);
        let failed: Vec<_> = report.failed_checks().collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].detail.contains("alpha[1]"), "{}", failed[0].detail);
    }

    #[test]
    fn validation_rejects_singular_sigma() {
        let mut spec = spec_with(2, vec![0.5, 0.5], vec![0.0; 2]);
        spec.sigma = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let report = validate_problem(&spec, 10, 1).unwrap();
        assert!(!report.usable);
        assert!(report
            .failed_checks()
            .any(|c| c.name == "condition-1-sigma-nonsingular"));
    }

    #[test]
    fn validation_flags_dimension_errors() {
        let mut spec = spec_with(2, vec![0.5, 0.5], vec![0.0; 2]);
        spec.sigma = vec![vec![1.0, 0.0]];
        assert!(validate_problem(&spec, 10, 1).is_err());
    }

    #[test]
    fn drift_descriptors_clamp_and_eval() {
        let d = Drift::AffineSaturated {
            b0: vec![0.0, 0.0],
            matrix: vec![vec![-3.0, 0.0], vec![0.0, -3.0]],
            clamp: 1.0,
        };
        let mut out = vec![0.0; 2];
        d.eval(&[5.0, 0.125], &mut out);
        assert_eq!(out, vec![-1.0, -0.375]);
        let z = Drift::Callback { id: "zero".into() };
        z.eval(&[5.0, 0.125], &mut out);
        assert_eq!(out, vec![0.0, 0.0]);
    }
}
