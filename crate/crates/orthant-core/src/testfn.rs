//! The comparison test function `φ = ρ²` and its convex body.
//!
//! For `d > 1` the construction is: enumerate the vectors
//! `Ξ* = { ξ : ξ_i ∈ {1, α_i} } \ {(α_1,…,α_d)}` (there are `2^d − 1`),
//! pick levels `1 = θ_1 < … < θ_d` with
//! `θ_1 > (d−1+maxα)/d · θ_d`, and intersect the halfspaces
//! `ξ·x ≤ θ_{ξ#}` (`ξ# =` number of ones in ξ) with the shifted orthant
//! `x_i ≥ −δ`. That polytope `S_δ` is compact, convex and a neighborhood
//! of the origin; its ε-fattening `S_δ^ε = {x : dist(x, S_δ) ≤ ε}` has a
//! `C^{1,1}` boundary, and the gauge
//! `ρ(x) = inf{λ > 0 : x ∈ λ S_δ^ε}` squares to the test function.
//!
//! The payoff is the sign structure: the active constraints of `S_δ` near
//! the slab `|x_i| ≤ δ` all carry `ξ_i = α_i` together with a common
//! coordinate equal to 1, which forces `H_i(Dφ(x)) ≥ 0` where `x_i ≥ 0`
//! and `≤ 0` where `x_i ≤ 0`. [`verify_sign_conditions`] samples both the
//! Hamiltonian signs and that active-set structure.
//!
//! Projections onto `S_δ` run Dykstra's alternating projections over the
//! `2^d − 1 + d` halfspaces, then polish the limit by projecting exactly
//! onto the affine hull of the detected active set and checking the KKT
//! multipliers; the polish step is what makes the gradient accurate enough
//! for the tight sign tolerances downstream. The gauge is a bisection on
//! `dist(y/λ, S_δ) ≤ ε` finished off by solving the distance equation in
//! closed form on the final active set.
//!
//! For `d = 1` the body degenerates to the interval `[−δ, 1]` and φ is
//! hard-coded to `x²`, which already has every required property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::hamiltonian_on_shifted;

/// One halfspace generator `ξ` with its count of unit entries.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Xi {
    pub coeffs: Vec<f64>,
    /// `ξ# = #{i : ξ_i = 1}`, selects the level `θ_{ξ#}`.
    pub ones: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConstraintKind {
    /// `ξ·x ≤ θ_k`, index into `xis`.
    Facet(usize),
    /// `−x_i ≤ δ`.
    Floor(usize),
}

#[derive(Debug, Clone)]
struct HalfSpace {
    a: Vec<f64>,
    b: f64,
    norm2: f64,
    kind: ConstraintKind,
}

/// The §-body: polytope data plus fattening radius.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexBody {
    pub d: usize,
    pub alpha: Vec<f64>,
    pub delta: f64,
    pub epsilon: f64,
    pub thetas: Vec<f64>,
    pub xis: Vec<Xi>,
    #[serde(skip)]
    constraints: Vec<HalfSpace>,
    /// Inner ball radius of `S_δ`: `δ ∧ min_k θ_k/|ξ|`.
    pub inner_radius: f64,
    /// Outer ball radius bound of `S_δ`.
    pub outer_radius: f64,
}

/// Default cap on Dykstra sweeps.
pub const PROJECTION_SWEEP_CAP: usize = 100_000;

/// Builds the body with explicit `δ`, `ε` and θ-spacing.
///
/// `θ_k = 1 + (k−1)η` with `η = spread · (1 − maxα)/((d−1)(d−1+maxα))`,
/// the largest uniform gap keeping the level condition strict; `spread = 1`
/// degenerates to equality and is rejected.
pub fn build_body(
    d: usize,
    alpha: &[f64],
    delta: f64,
    epsilon: f64,
    spread: f64,
) -> Result<ConvexBody> {
    if d == 0 || alpha.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: alpha.len(),
        });
    }
    let maxa = alpha.iter().cloned().fold(0.0, f64::max);
    if !(0.0..1.0).contains(&maxa) || alpha.iter().any(|&a| a < 0.0) {
        return Err(Error::Constraint("alpha entries must lie in [0, 1)".into()));
    }
    if !(delta > 0.0) || !(epsilon > 0.0) || epsilon >= delta {
        return Err(Error::Constraint("need 0 < epsilon < delta".into()));
    }
    if !(spread > 0.0 && spread <= 1.0) {
        return Err(Error::Constraint("spread must lie in (0, 1]".into()));
    }

    let thetas: Vec<f64> = if d == 1 {
        vec![1.0]
    } else {
        let eta_max = (1.0 - maxa) / ((d as f64 - 1.0) * (d as f64 - 1.0 + maxa));
        let eta = spread * eta_max;
        (0..d).map(|k| 1.0 + k as f64 * eta).collect()
    };
    let theta_d = thetas[d - 1];
    if d > 1 {
        let rhs = (d as f64 - 1.0 + maxa) / d as f64 * theta_d;
        if thetas[0] - rhs <= 1e-12 * theta_d {
            return Err(Error::Constraint(format!(
                "level condition not strict: theta_1 = {} vs {rhs}",
                thetas[0]
            )));
        }
        debug_assert!(thetas[0] > maxa * theta_d);
    }

    // all ξ with ξ_i ∈ {1, α_i}, except the all-α vector (mask 0)
    let mut xis = Vec::with_capacity((1usize << d) - 1);
    for mask in 1u64..(1u64 << d) {
        let coeffs: Vec<f64> = (0..d)
            .map(|i| if mask >> i & 1 == 1 { 1.0 } else { alpha[i] })
            .collect();
        xis.push(Xi {
            coeffs,
            ones: mask.count_ones() as usize,
        });
    }
    debug_assert_eq!(xis.len(), (1 << d) - 1);

    let mut constraints = Vec::with_capacity(xis.len() + d);
    let mut min_facet_dist = f64::INFINITY;
    for (idx, xi) in xis.iter().enumerate() {
        let norm2: f64 = xi.coeffs.iter().map(|v| v * v).sum();
        let b = thetas[xi.ones - 1];
        min_facet_dist = min_facet_dist.min(b / norm2.sqrt());
        constraints.push(HalfSpace {
            a: xi.coeffs.clone(),
            b,
            norm2,
            kind: ConstraintKind::Facet(idx),
        });
    }
    for i in 0..d {
        let mut a = vec![0.0; d];
        a[i] = -1.0;
        constraints.push(HalfSpace {
            a,
            b: delta,
            norm2: 1.0,
            kind: ConstraintKind::Floor(i),
        });
    }

    let inner_radius = delta.min(min_facet_dist);
    let outer_radius = (d as f64).sqrt() * (theta_d + (d as f64 - 1.0) * delta);
    Ok(ConvexBody {
        d,
        alpha: alpha.to_vec(),
        delta,
        epsilon,
        thetas,
        xis,
        constraints,
        inner_radius,
        outer_radius,
    })
}

/// Builds a body with the default `δ = 0.05/(1+d)`, `ε = δ/2`, halving `δ`
/// (up to 10 times) until the active-set structure behind the sign
/// conditions verifies on sampled boundary points. The admissible `δ` is
/// only known to exist by compactness, so this constructive surrogate is
/// checked empirically.
pub fn build_body_auto(
    d: usize,
    alpha: &[f64],
    spread: f64,
    check_samples: usize,
    seed: u64,
) -> Result<ConvexBody> {
    let mut delta = 0.05 / (1.0 + d as f64);
    for _ in 0..=10 {
        let body = build_body(d, alpha, delta, delta / 2.0, spread)?;
        if d == 1 || body.check_active_set_structure(check_samples, seed).is_ok() {
            return Ok(body);
        }
        delta *= 0.5;
    }
    Err(Error::Constraint(
        "no admissible delta found within 10 halvings".into(),
    ))
}

/// Active facet / floor indices at a boundary point of `S_δ`.
#[derive(Debug, Clone, Serialize)]
pub struct NormalConeGenerators {
    /// Coordinates `j` with `z_j = −δ` (the generators `−e_j`).
    pub minus_axes: Vec<usize>,
    /// Indices into `xis` of the active facets.
    pub active_xis: Vec<usize>,
}

impl ConvexBody {
    /// Exact membership test for `S_δ` (closed inequalities, no tolerance).
    pub fn member_sdelta(&self, x: &[f64]) -> Result<bool> {
        if x.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self
            .constraints
            .iter()
            .all(|c| dot(&c.a, x) <= c.b))
    }

    fn violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| dot(&c.a, x) - c.b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean projection onto `S_δ`.
    pub fn project_sdelta(&self, x: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.project_with_active(x, tol).map(|(pi, _)| pi)
    }

    /// Projection plus the detected active constraint set.
    fn project_with_active(&self, x: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<usize>)> {
        if !(tol > 0.0) {
            return Err(Error::Precondition("tol must be positive".into()));
        }
        if x.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        if self.member_sdelta(x)? {
            return Ok((x.to_vec(), Vec::new()));
        }
        let d = self.d;
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let inner_tol = (tol.min(1e-9)) * scale;

        let mut z = x.to_vec();
        let mut corr = vec![vec![0.0; d]; self.constraints.len()];
        let mut w = vec![0.0; d];
        let mut converged = false;
        for _ in 0..PROJECTION_SWEEP_CAP {
            let mut movement = 0.0f64;
            for (c, hs) in self.constraints.iter().enumerate() {
                for i in 0..d {
                    w[i] = z[i] + corr[c][i];
                }
                let excess = (dot(&hs.a, &w) - hs.b) / hs.norm2;
                if excess > 0.0 {
                    for i in 0..d {
                        let zi = w[i] - excess * hs.a[i];
                        corr[c][i] = w[i] - zi;
                        movement += (z[i] - zi).abs();
                        z[i] = zi;
                    }
                } else {
                    for i in 0..d {
                        corr[c][i] = 0.0;
                        movement += (z[i] - w[i]).abs();
                        z[i] = w[i];
                    }
                }
            }
            if movement < inner_tol {
                converged = true;
                break;
            }
        }

        // Active-set polish: exact projection onto the affine hull of the
        // constraints Dykstra has driven to equality, verified by KKT.
        let act_tol = 1e-7 * scale;
        let mut active: Vec<usize> = self
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, hs)| (dot(&hs.a, &z) - hs.b).abs() <= act_tol)
            .map(|(c, _)| c)
            .collect();
        if let Some(pi) = self.exact_projection(x, &mut active) {
            return Ok((pi, active));
        }
        if converged {
            let active = self
                .constraints
                .iter()
                .enumerate()
                .filter(|(_, hs)| (dot(&hs.a, &z) - hs.b).abs() <= act_tol)
                .map(|(c, _)| c)
                .collect();
            return Ok((z, active));
        }
        Err(Error::NonConvergence {
            iterations: PROJECTION_SWEEP_CAP,
            last: self.violation(&z).max(0.0),
            history: Vec::new(),
        })
    }

    /// Projection onto the intersection of the active hyperplanes with an
    /// add/drop loop on the KKT conditions. Returns `None` when no clean
    /// certificate is reached.
    fn exact_projection(&self, x: &[f64], active: &mut Vec<usize>) -> Option<Vec<f64>> {
        use nalgebra::{DMatrix, DVector};
        let d = self.d;
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for _ in 0..(4 * self.constraints.len() + 8) {
            if active.is_empty() {
                return if self.violation(x) <= 1e-12 * scale {
                    Some(x.to_vec())
                } else {
                    None
                };
            }
            let m = active.len();
            let a = DMatrix::from_fn(m, d, |r, c| self.constraints[active[r]].a[c]);
            let b = DVector::from_fn(m, |r, _| self.constraints[active[r]].b);
            let g = &a * a.transpose();
            let rhs = &a * DVector::from_column_slice(x) - &b;
            let lam = g.svd(true, true).solve(&rhs, 1e-13).ok()?;
            let pi = DVector::from_column_slice(x) - a.transpose() * &lam;

            let (worst_row, worst_lam) = lam
                .iter()
                .enumerate()
                .min_by(|l, r| l.1.partial_cmp(r.1).unwrap())
                .map(|(r, &v)| (r, v))?;
            if worst_lam < -1e-11 * scale {
                active.remove(worst_row);
                continue;
            }
            let (worst_c, worst_v) = self
                .constraints
                .iter()
                .enumerate()
                .map(|(c, hs)| (c, (dot(&hs.a, pi.as_slice()) - hs.b) / hs.norm2.sqrt()))
                .max_by(|l, r| l.1.partial_cmp(&r.1).unwrap())?;
            if worst_v > 1e-11 * scale {
                if active.contains(&worst_c) {
                    return None;
                }
                active.push(worst_c);
                continue;
            }
            return Some(pi.as_slice().to_vec());
        }
        None
    }

    fn dist_sdelta(&self, x: &[f64], tol: f64) -> Result<f64> {
        let (pi, _) = self.project_with_active(x, tol)?;
        Ok(norm(&sub(x, &pi)))
    }

    /// Gauge of the fattened body: `ρ(y) = inf{λ > 0 : dist(y/λ, S_δ) ≤ ε}`.
    pub fn gauge(&self, y: &[f64], tol: f64) -> Result<f64> {
        self.gauge_with_normal(y, tol).map(|g| g.rho)
    }

    /// `Dρ(y)` via the outward normal at `y/ρ(y)`, scaled by the Euler
    /// relation `Dρ(y)·y = ρ(y)`.
    pub fn gauge_gradient(&self, y: &[f64], tol: f64) -> Result<Vec<f64>> {
        if norm(y) == 0.0 {
            return Err(Error::Precondition("gauge gradient needs y != 0".into()));
        }
        if self.d == 1 {
            return Ok(vec![if y[0] >= 0.0 {
                1.0 / (self.thetas[0] + self.epsilon)
            } else {
                -1.0 / (self.delta + self.epsilon)
            }]);
        }
        let g = self.gauge_with_normal(y, tol)?;
        let n = g.normal.ok_or_else(|| {
            Error::Precondition("y/rho(y) is not strictly outside S_delta".into())
        })?;
        let denom = dot(&n, y);
        Ok(n.iter().map(|ni| g.rho * ni / denom).collect())
    }

    /// `φ(y)`: `ρ²(y)` for `d > 1`, the hard-coded `y²` for `d = 1`.
    pub fn phi(&self, y: &[f64], tol: f64) -> Result<f64> {
        if self.d == 1 {
            return Ok(y[0] * y[0]);
        }
        Ok(self.gauge(y, tol)?.powi(2))
    }

    /// `Dφ = 2ρ Dρ` (and exactly 0 at the origin).
    pub fn phi_gradient(&self, y: &[f64], tol: f64) -> Result<Vec<f64>> {
        if self.d == 1 {
            return Ok(vec![2.0 * y[0]]);
        }
        if norm(y) == 0.0 {
            return Ok(vec![0.0; self.d]);
        }
        let g = self.gauge_with_normal(y, tol)?;
        let n = g.normal.ok_or_else(|| {
            Error::Precondition("y/rho(y) is not strictly outside S_delta".into())
        })?;
        let denom = dot(&n, y);
        Ok(n.iter().map(|ni| 2.0 * g.rho * g.rho * ni / denom).collect())
    }

    fn gauge_with_normal(&self, y: &[f64], tol: f64) -> Result<GaugeResult> {
        if !(tol > 0.0) {
            return Err(Error::Precondition("tol must be positive".into()));
        }
        if y.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: y.len(),
            });
        }
        let ny = norm(y);
        if ny == 0.0 {
            return Ok(GaugeResult {
                rho: 0.0,
                normal: None,
            });
        }
        if self.d == 1 {
            let rho = (y[0] / (self.thetas[0] + self.epsilon))
                .max(-y[0] / (self.delta + self.epsilon));
            return Ok(GaugeResult {
                rho,
                normal: Some(vec![if y[0] >= 0.0 { 1.0 } else { -1.0 }]),
            });
        }

        let eps = self.epsilon;
        let ptol = tol.min(1e-10);
        let mut hi = ny / (self.inner_radius + eps);
        let mut lo = ny / (self.outer_radius + eps);
        // make sure the bracket is valid before bisecting
        for _ in 0..64 {
            if self.dist_sdelta(&scaled(y, 1.0 / lo), ptol)? > eps {
                break;
            }
            lo *= 0.5;
        }
        for _ in 0..64 {
            if self.dist_sdelta(&scaled(y, 1.0 / hi), ptol)? <= eps {
                break;
            }
            hi *= 2.0;
        }
        let rel = tol.min(1e-9);
        while hi - lo > rel * hi {
            let mid = 0.5 * (lo + hi);
            if self.dist_sdelta(&scaled(y, 1.0 / mid), ptol)? <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }

        // closed-form finish on the active set at the bracket midpoint
        let lam = 0.5 * (lo + hi);
        if let Some(res) = self.gauge_polish(y, lam, lo, hi, ptol) {
            return Ok(res);
        }

        // fall back to a deep bisection
        let mut lo = lo;
        let mut hi = hi;
        while hi - lo > 1e-13 * hi {
            let mid = 0.5 * (lo + hi);
            if self.dist_sdelta(&scaled(y, 1.0 / mid), ptol)? <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let rho = 0.5 * (lo + hi);
        let z = scaled(y, 1.0 / rho);
        let (pi, _) = self.project_with_active(&z, ptol)?;
        let diff = sub(&z, &pi);
        let nn = norm(&diff);
        let normal = if nn > ptol {
            Some(scaled(&diff, 1.0 / nn))
        } else {
            None
        };
        Ok(GaugeResult { rho, normal })
    }

    /// Solves `|residual(y/λ)| = ε` exactly on the active set detected at
    /// `λ = lam`: the residual of the affine projection is linear in `1/λ`,
    /// so the distance equation is a quadratic in `1/λ`.
    fn gauge_polish(
        &self,
        y: &[f64],
        lam: f64,
        lo: f64,
        hi: f64,
        ptol: f64,
    ) -> Option<GaugeResult> {
        use nalgebra::{DMatrix, DVector};
        let z = scaled(y, 1.0 / lam);
        let (_, active) = self.project_with_active(&z, ptol).ok()?;
        if active.is_empty() {
            return None;
        }
        let d = self.d;
        let m = active.len();
        let a = DMatrix::from_fn(m, d, |r, c| self.constraints[active[r]].a[c]);
        let bvec = DVector::from_fn(m, |r, _| self.constraints[active[r]].b);
        let g = &a * a.transpose();
        let svd = g.svd(true, true);
        let wy = svd.solve(&(&a * DVector::from_column_slice(y)), 1e-13).ok()?;
        let wb = svd.solve(&bvec, 1e-13).ok()?;
        let u = a.transpose() * wy;
        let v = a.transpose() * wb;
        // |u μ − v|² = ε², μ = 1/λ, increasing branch
        let qa = u.dot(&u);
        let qc = u.dot(&v);
        let cc = v.dot(&v) - self.epsilon * self.epsilon;
        let disc = qc * qc - qa * cc;
        if disc < 0.0 || qa <= 0.0 {
            return None;
        }
        let mu = (qc + disc.sqrt()) / qa;
        if !(mu > 0.0) {
            return None;
        }
        let rho = 1.0 / mu;
        if rho < lo * (1.0 - 1e-6) || rho > hi * (1.0 + 1e-6) {
            return None;
        }
        // certify: the residual at the polished point must have length ε and
        // the polished point's projection must sit on the same active set
        let zstar = scaled(y, mu);
        let (pi, act2) = self.project_with_active(&zstar, ptol).ok()?;
        let diff = sub(&zstar, &pi);
        let nn = norm(&diff);
        if (nn - self.epsilon).abs() > 1e-11 * (1.0 + norm(&zstar)) || act2 != active {
            return None;
        }
        Some(GaugeResult {
            rho,
            normal: Some(scaled(&diff, 1.0 / nn)),
        })
    }

    /// Active generators of the normal cone `N(z, S_δ)` at a boundary point.
    pub fn normal_cone_generators(&self, z: &[f64], tol: f64) -> Result<NormalConeGenerators> {
        if z.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: z.len(),
            });
        }
        let mut minus_axes = Vec::new();
        let mut active_xis = Vec::new();
        for hs in &self.constraints {
            if (dot(&hs.a, z) - hs.b).abs() <= tol {
                match hs.kind {
                    ConstraintKind::Facet(idx) => active_xis.push(idx),
                    ConstraintKind::Floor(i) => minus_axes.push(i),
                }
            }
        }
        if minus_axes.is_empty() && active_xis.is_empty() {
            return Err(Error::Precondition(
                "point is not on the boundary of S_delta (no active constraint)".into(),
            ));
        }
        Ok(NormalConeGenerators {
            minus_axes,
            active_xis,
        })
    }

    /// Boundary point of `S_δ` on the slice `{z_i = s}` in direction `u`
    /// (whose `i`-th entry is ignored), together with nothing if the slice
    /// ray never leaves the body (unbounded direction).
    fn slice_boundary_point(&self, i: usize, s: f64, u: &[f64], floors: bool) -> Option<Vec<f64>> {
        let mut dir = u.to_vec();
        dir[i] = 0.0;
        let nd = norm(&dir);
        if nd == 0.0 {
            return None;
        }
        for v in dir.iter_mut() {
            *v /= nd;
        }
        let mut t = f64::INFINITY;
        for hs in &self.constraints {
            if !floors && matches!(hs.kind, ConstraintKind::Floor(_)) {
                continue;
            }
            let den = dot(&hs.a, &dir);
            if den > 1e-14 {
                let rhs = hs.b - hs.a[i] * s;
                if rhs <= 0.0 {
                    return None;
                }
                t = t.min(rhs / den);
            }
        }
        if !t.is_finite() {
            return None;
        }
        let mut z = scaled(&dir, t);
        z[i] = s;
        Some(z)
    }

    /// Checks the active-set structure behind the sign lemmas: at boundary
    /// points of `S_δ` with `|z_i| ≤ δ(1 − 10⁻³)`, every active `ξ` has
    /// `ξ_i = α_i` and the active set shares a coordinate equal to 1 (so the
    /// whole convex hull keeps `max_j ξ_j = 1`). Facet interiors are sampled
    /// per slice; facet pairs are probed along their intersections.
    pub fn check_active_set_structure(&self, n_samples: usize, seed: u64) -> Result<()> {
        let d = self.d;
        if d == 1 {
            return Ok(());
        }
        let act_tol = 1e-9 * (1.0 + self.thetas[d - 1]);
        let cap = self.delta * (1.0 - 1e-3);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_b0d1);
        let mut points: Vec<(usize, Vec<f64>)> = Vec::new();
        for i in 0..d {
            let mut produced = 0;
            let mut tries = 0;
            while produced < n_samples && tries < 20 * n_samples {
                tries += 1;
                let s = rng.gen_range(-cap..cap);
                let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if let Some(z) = self.slice_boundary_point(i, s, &u, true) {
                    points.push((i, z));
                    produced += 1;
                }
            }
        }
        // edge probes: pairwise facet intersections restricted to the slab
        for f1 in 0..self.xis.len() {
            for f2 in f1 + 1..self.xis.len() {
                for i in 0..d {
                    for _ in 0..4 {
                        let s = rng.gen_range(-cap..cap);
                        if let Some(z) = self.edge_point(f1, f2, i, s, &mut rng) {
                            points.push((i, z));
                        }
                    }
                }
            }
        }
        for (i, z) in points {
            if z[i].abs() > cap {
                continue;
            }
            let gens = self.normal_cone_generators(&z, act_tol)?;
            self.check_cone_structure(i, &gens)?;
        }
        Ok(())
    }

    /// Lemma-style structure test at one point: all active ξ carry
    /// `ξ_i = α_i` and share a common unit coordinate.
    fn check_cone_structure(&self, i: usize, gens: &NormalConeGenerators) -> Result<()> {
        if gens.active_xis.is_empty() {
            return Ok(());
        }
        for &xi_idx in &gens.active_xis {
            let xi = &self.xis[xi_idx];
            if xi.coeffs[i] != self.alpha[i] {
                return Err(Error::Constraint(format!(
                    "active xi {:?} has xi[{i}] = {} != alpha[{i}] = {}",
                    xi.coeffs, xi.coeffs[i], self.alpha[i]
                )));
            }
        }
        let common_one = (0..self.d).any(|j| {
            gens.active_xis
                .iter()
                .all(|&xi_idx| self.xis[xi_idx].coeffs[j] == 1.0)
        });
        if !common_one {
            return Err(Error::Constraint(
                "active xis share no common unit coordinate".into(),
            ));
        }
        Ok(())
    }

    /// A point of `facet1 ∩ facet2 ∩ {z_i = s} ∩ ∂S_δ`, if the intersection
    /// meets the body.
    fn edge_point(
        &self,
        f1: usize,
        f2: usize,
        i: usize,
        s: f64,
        rng: &mut ChaCha20Rng,
    ) -> Option<Vec<f64>> {
        use nalgebra::{DMatrix, DVector};
        let d = self.d;
        let mut rows: Vec<(Vec<f64>, f64)> = vec![
            (
                self.constraints[f1].a.clone(),
                self.constraints[f1].b,
            ),
            (
                self.constraints[f2].a.clone(),
                self.constraints[f2].b,
            ),
        ];
        let mut ei = vec![0.0; d];
        ei[i] = 1.0;
        rows.push((ei, s));
        let m = rows.len();
        let a = DMatrix::from_fn(m, d, |r, c| rows[r].0[c]);
        let b = DVector::from_fn(m, |r, _| rows[r].1);
        let svd = a.clone().svd(true, true);
        if svd.rank(1e-10) < m.min(d) {
            return None;
        }
        let base = svd.solve(&b, 1e-12).ok()?;
        let mut z: Vec<f64> = base.as_slice().to_vec();
        if d > m {
            // random offset in the null space, then pull back to feasibility
            let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dv = DVector::from_column_slice(&dir);
            let proj = &a.transpose() * svd.solve(&(&a * &dv), 1e-12).ok()?;
            let off = dv - proj;
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += 0.1 * off[k];
            }
        }
        let tolm = 1e-9 * (1.0 + self.thetas[d - 1]);
        if self.violation(&z) > tolm {
            return None;
        }
        Some(z)
    }
}

struct GaugeResult {
    rho: f64,
    normal: Option<Vec<f64>>,
}

/// Outcome of the sign-condition sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SignReport {
    pub samples_per_radius: usize,
    pub radii: Vec<f64>,
    /// Worst `−H_i(Dφ(x))` over samples with `x_i ≥ 0` (should be ≤ tol).
    pub max_violation_nonneg: f64,
    /// Worst `H_i(Dφ(x))` over samples with `x_i ≤ 0` (should be ≤ tol).
    pub max_violation_nonpos: f64,
    /// Boundary points examined for the active-set structure.
    pub cone_points: usize,
    pub cone_violations: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Samples the theorem's sign conditions: `H_i(Dφ(x)) ≥ 0` where
/// `x_i ≥ 0` and `≤ 0` where `x_i ≤ 0`, on uniform sphere samples of radii
/// `{0.5, 1, 2, 5}`, plus the active-set structure on boundary points with
/// `|x_i| ≤ δ(1 − 10⁻³)`. Bodies must carry `h ≡ 0` Hamiltonians, which is
/// the only family this module evaluates.
pub fn verify_sign_conditions(
    body: &ConvexBody,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<SignReport> {
    let d = body.d;
    let radii: Vec<f64> = vec![0.5, 1.0, 2.0, 5.0];
    let gtol = 1e-9;

    let per_radius: Vec<(f64, f64)> = radii
        .par_iter()
        .map(|&r| {
            (0..n_samples)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    rng.set_stream((r.to_bits() >> 17) ^ k as u64);
                    let mut x: Vec<f64> =
                        (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let nx = norm(&x);
                    if nx == 0.0 {
                        return (0.0, 0.0);
                    }
                    for v in x.iter_mut() {
                        *v *= r / nx;
                    }
                    let grad = body
                        .phi_gradient(&x, gtol)
                        .expect("gradient must exist off the origin");
                    let mut worst_nonneg = 0.0f64;
                    let mut worst_nonpos = 0.0f64;
                    for i in 0..d {
                        let h = hamiltonian_on_shifted(&body.alpha, i, &grad);
                        if x[i] >= 0.0 {
                            worst_nonneg = worst_nonneg.max(-h);
                        }
                        if x[i] <= 0.0 {
                            worst_nonpos = worst_nonpos.max(h);
                        }
                    }
                    (worst_nonneg, worst_nonpos)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
        })
        .collect();

    let max_violation_nonneg = per_radius.iter().map(|v| v.0).fold(0.0, f64::max);
    let max_violation_nonpos = per_radius.iter().map(|v| v.1).fold(0.0, f64::max);

    let mut cone_points = 0usize;
    let mut cone_violations = 0usize;
    if d > 1 {
        let act_tol = 1e-9 * (1.0 + body.thetas[d - 1]);
        let cap = body.delta * (1.0 - 1e-3);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xc0de);
        for i in 0..d {
            let mut produced = 0;
            let mut tries = 0;
            while produced < n_samples / 4 && tries < 10 * n_samples {
                tries += 1;
                let s = rng.gen_range(-cap..cap);
                let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if let Some(z) = body.slice_boundary_point(i, s, &u, true) {
                    produced += 1;
                    cone_points += 1;
                    let gens = body.normal_cone_generators(&z, act_tol)?;
                    if body.check_cone_structure(i, &gens).is_err() {
                        cone_violations += 1;
                    }
                }
            }
        }
    }

    let passed =
        max_violation_nonneg <= tol && max_violation_nonpos <= tol && cone_violations == 0;
    Ok(SignReport {
        samples_per_radius: n_samples,
        radii,
        max_violation_nonneg,
        max_violation_nonpos,
        cone_points,
        cone_violations,
        tol,
        passed,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}
