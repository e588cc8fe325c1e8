//! Online safety filter
//!
//! ```text
//! min ½‖u − q‖²   s.t.   d·u ≥ rhs,   u ∈ U
//! ```
//!
//! With a single half-space constraint the Lagrangian dual is one-dimensional:
//! `u(μ) = Π_U(q + μ d)` and the gap `g(μ) = d·u(μ) − rhs` is nondecreasing in
//! `μ ≥ 0`, so the optimal multiplier is the smallest root of the gap, found by
//! doubling and bisection.

use crate::convex_sets::{InputSet, PROJECTION_TOL};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, dist2, norm2_sq};
use serde::{Deserialize, Serialize};

pub const DEFAULT_QP_TOL: f64 = 1e-10;
const MU_CAP: f64 = 1e12;
const POLISH_BAND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    /// Nominal input.
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    /// Constraint reads `d·u >= rhs`.
    pub rhs: f64,
    pub set: InputSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    /// `d·u >= rhs` and `u ∈ U` have no common point.
    InfeasibleCertificate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    /// The filtered input; for an infeasible instance, the maximizer of `d·u` over `U`.
    pub u_star: Vec<f64>,
    pub mu: f64,
    pub status: QpStatus,
    /// `d·u⋆ − rhs`
    pub tissf_slack: f64,
    pub set_violation: f64,
}

impl QpResult {
    fn finish(inst: &QpInstance, u: Vec<f64>, mu: f64, status: QpStatus) -> Self {
        QpResult {
            tissf_slack: dot(&inst.d, &u) - inst.rhs,
            set_violation: inst.set.violation(&u),
            u_star: u,
            mu,
            status,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn objective(&self, q: &[f64]) -> f64 {
        0.5 * dist2(&self.u_star, q).powi(2)
    }
}

impl QpInstance {
    pub fn new(q: Vec<f64>, d: Vec<f64>, rhs: f64, set: InputSet) -> Result<Self> {
        let inst = QpInstance { q, d, rhs, set };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let m = self.set.dim();
        for (v, ctx) in [(&self.q, "QP nominal input"), (&self.d, "QP constraint row")] {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: m,
                    got: v.len(),
                });
            }
            if !all_finite(v) {
                return Err(Error::NonFinite(ctx));
            }
        }
        if !self.rhs.is_finite() {
            return Err(Error::NonFinite("QP right-hand side"));
        }
        Ok(())
    }

    /// Primal point for multiplier `mu`.
    pub fn primal(&self, mu: f64) -> Result<Vec<f64>> {
        self.set.project(&axpy(&self.q, mu, &self.d), PROJECTION_TOL)
    }

    /// `g(μ) = d·u(μ) − rhs`
    pub fn gap(&self, mu: f64) -> Result<f64> {
        Ok(dot(&self.d, &self.primal(mu)?) - self.rhs)
    }
}

/// Solves the filter QP by dual bisection to a multiplier interval of width `tol`.
pub fn solve_safety_qp(inst: &QpInstance, tol: f64) -> Result<QpResult> {
    inst.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("QP tolerance must be positive, got {tol}")));
    }

    if norm2_sq(&inst.d) == 0.0 {
        return Ok(if inst.rhs <= 0.0 {
            let u = inst.primal(0.0)?;
            QpResult::finish(inst, u, 0.0, QpStatus::Optimal)
        } else {
            let u = inst.set.support_point(&inst.d)?;
            QpResult::finish(inst, u, 0.0, QpStatus::InfeasibleCertificate)
        });
    }

    let (sigma, u_sup) = inst.set.support(&inst.d)?;
    if inst.rhs > sigma + tol {
        return Ok(QpResult::finish(inst, u_sup, 0.0, QpStatus::InfeasibleCertificate));
    }

    let u0 = inst.primal(0.0)?;
    if dot(&inst.d, &u0) - inst.rhs >= 0.0 {
        return Ok(QpResult::finish(inst, u0, 0.0, QpStatus::Optimal));
    }

    let mut lo = 0.0;
    let mut hi = 1.0 / norm2_sq(&inst.d).sqrt();
    while inst.gap(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > MU_CAP {
            // Only reachable when rhs sits within tol of σ(d): the support
            // point itself is the best available input.
            let res = QpResult::finish(inst, u_sup, MU_CAP, QpStatus::Optimal);
            return Ok(polish(inst, res, sigma));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inst.gap(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let u = inst.primal(hi)?;
    Ok(polish(inst, QpResult::finish(inst, u, hi, QpStatus::Optimal), sigma))
}

// Moves a marginally infeasible point toward the support point by the
// smallest convex combination that restores d·u >= rhs.
fn polish(inst: &QpInstance, res: QpResult, sigma: f64) -> QpResult {
    if !(res.tissf_slack < 0.0 && res.tissf_slack > -POLISH_BAND) {
        return res;
    }
    let Ok(u_sup) = inst.set.support_point(&inst.d) else {
        return res;
    };
    let du = dot(&inst.d, &res.u_star);
    let span = sigma - du;
    if span <= 0.0 {
        return res;
    }
    let theta = ((inst.rhs - du) / span).clamp(0.0, 1.0);
    let u: Vec<f64> = res
        .u_star
        .iter()
        .zip(&u_sup)
        .map(|(a, b)| (1.0 - theta) * a + theta * b)
        .collect();
    QpResult::finish(inst, u, res.mu, res.status)
}

/// Exhaustive grid minimizer over the set's bounding box, for boxes and balls
/// with at most three inputs. Test oracle only; `mu` is reported as zero.
pub fn brute_force_qp(inst: &QpInstance, grid_points_per_dim: usize) -> Result<QpResult> {
    inst.validate()?;
    let m = inst.set.dim();
    if m > 3 {
        return Err(Error::DimensionTooLarge(m));
    }
    if matches!(inst.set, InputSet::Polyhedron(_)) {
        return Err(Error::InvalidArgument("grid oracle supports boxes and balls only".into()));
    }
    if grid_points_per_dim < 2 {
        return Err(Error::InvalidArgument("grid oracle needs at least 2 points per axis".into()));
    }
    let (lo, hi) = inst.set.bounding_box()?;
    let n = grid_points_per_dim;
    let axis = |i: usize, k: usize| lo[i] + (hi[i] - lo[i]) * k as f64 / (n - 1) as f64;
    let total = n.pow(m as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut u = vec![0.0; m];
    for flat in 0..total {
        let mut rem = flat;
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = axis(i, rem % n);
            rem /= n;
        }
        if !inst.set.contains(&u, 1e-12) || dot(&inst.d, &u) < inst.rhs {
            continue;
        }
        let obj = 0.5 * dist2(&u, &inst.q).powi(2);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, u.clone()));
        }
    }
    Ok(match best {
        Some((_, u)) => QpResult::finish(inst, u, 0.0, QpStatus::Optimal),
        None => {
            let u = inst.set.support_point(&inst.d)?;
            QpResult::finish(inst, u, 0.0, QpStatus::InfeasibleCertificate)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box1(l: f64, h: f64) -> InputSet {
        InputSet::boxed(vec![l], vec![h]).unwrap()
    }

    #[test]
    fn active_halfspace_inside_box() {
        let inst = QpInstance::new(vec![2.0], vec![-1.0], -1.0, box1(-15.0, 15.0)).unwrap();
        let r = solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap();
        assert!(r.is_optimal());
        assert!((r.u_star[0] - 1.0).abs() < 1e-9);
        assert!(r.mu > 0.0);
        assert!(r.tissf_slack >= -1e-6);
        assert!((r.mu * r.tissf_slack).abs() <= 1e-4 * (1.0 + r.mu));
    }

    #[test]
    fn nominal_already_feasible() {
        let inst =
            QpInstance::new(vec![0.0, 0.0], vec![1.0, 0.0], -5.0, InputSet::ball(1.0, 2).unwrap()).unwrap();
        let r = solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap();
        assert_eq!(r.u_star, vec![0.0, 0.0]);
        assert_eq!(r.mu, 0.0);
    }

    #[test]
    fn nominal_in_box_satisfies_constraint() {
        let set = InputSet::boxed(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let inst = QpInstance::new(vec![2.0, 2.0], vec![1.0, 1.0], 3.0, set).unwrap();
        let r = solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap();
        assert_eq!(r.u_star, vec![2.0, 2.0]);
        assert_eq!(r.mu, 0.0);
        let oracle = brute_force_qp(&inst, 401).unwrap();
        assert_eq!(oracle.u_star, vec![2.0, 2.0]);
    }

    #[test]
    fn infeasible_certificate() {
        let inst = QpInstance::new(vec![0.0], vec![-1.0], 16.0, box1(-15.0, 15.0)).unwrap();
        let r = solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap();
        assert_eq!(r.status, QpStatus::InfeasibleCertificate);
        assert_eq!(r.u_star, vec![-15.0]);
        assert!((r.tissf_slack + 1.0).abs() < 1e-12);
        assert_eq!(brute_force_qp(&inst, 101).unwrap().status, QpStatus::InfeasibleCertificate);
    }

    #[test]
    fn zero_row() {
        let ok = QpInstance::new(vec![20.0], vec![0.0], -3.0, box1(-15.0, 15.0)).unwrap();
        let r = solve_safety_qp(&ok, DEFAULT_QP_TOL).unwrap();
        assert_eq!(r.u_star, vec![15.0]);
        let bad = QpInstance::new(vec![0.0], vec![0.0], 1.0, box1(-15.0, 15.0)).unwrap();
        assert_eq!(
            solve_safety_qp(&bad, DEFAULT_QP_TOL).unwrap().status,
            QpStatus::InfeasibleCertificate
        );
    }

    #[test]
    fn boundary_tight_ball() {
        // rhs equals σ exactly: the only feasible point is the support point
        let set = InputSet::ball(2.0, 2).unwrap();
        let inst = QpInstance::new(vec![0.0, 0.0], vec![0.0, 1.0], 2.0, set).unwrap();
        let r = solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap();
        assert!(r.is_optimal());
        assert!(r.tissf_slack >= -1e-6);
        assert!((r.u_star[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn oracle_1d() {
        let inst = QpInstance::new(vec![2.0], vec![-1.0], -1.0, box1(-15.0, 15.0)).unwrap();
        let r = brute_force_qp(&inst, 20_001).unwrap();
        assert!((r.u_star[0] - 1.0).abs() <= 30.0 / 20_000.0);
    }

    #[test]
    fn oracle_unconstrained() {
        let inst = QpInstance::new(vec![0.3], vec![1.0], -1e9, box1(-1.0, 1.0)).unwrap();
        let r = brute_force_qp(&inst, 11).unwrap();
        assert!((r.u_star[0] - 0.4).abs() < 1e-12 || (r.u_star[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_large_dim() {
        let set = InputSet::ball(1.0, 4).unwrap();
        let inst = QpInstance::new(vec![0.0; 4], vec![1.0; 4], 0.0, set).unwrap();
        assert!(matches!(brute_force_qp(&inst, 3), Err(Error::DimensionTooLarge(4))));
    }
}
