//! Compact convex admissible input sets: Euclidean balls, boxes and bounded
//! polyhedra `{u : A u <= b}`.
//!
//! Every set answers support queries `σ(d) = max_{u∈U} d·u` together with a
//! maximizer, Euclidean projection and a tolerance-aware membership test.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, norm2, norm2_sq, solve_dense};
use crate::lp_solver::{solve_simplex, LpProblem, LpStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default stopping tolerance for polyhedral projection.
pub const PROJECTION_TOL: f64 = 1e-9;
/// Cap on full Dykstra sweeps.
pub const DYKSTRA_MAX_ITER: usize = 10_000;

const BOUNDEDNESS_PROBES: usize = 16;
const PROBE_SEED: u64 = 0x5eed_0f_5e75;

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    gamma: f64,
    dim: usize,
}

impl Ball {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSet {
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    // Chebyshev center, used as the member returned for d = 0.
    center: Vec<f64>,
}

impl Polyhedron {
    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn support(&self, d: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lp = LpProblem {
            c: d.iter().map(|v| -v).collect(),
            g_mat: self.a.clone(),
            g: self.b.clone(),
        };
        let sol = solve_simplex(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok((-sol.objective, sol.x)),
            LpStatus::Unbounded => Err(Error::LpUnbounded),
            LpStatus::Infeasible => Err(Error::InvalidSet("polyhedron became infeasible".into())),
        }
    }

    fn max_violation(&self, u: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| dot(row, u) - bi)
            .fold(0.0, f64::max)
    }

    /// Dykstra's alternating projections, stopped once neither the iterate
    /// nor the correction increments move by `tol` over a sweep and no facet
    /// is violated by more than `tol`; then polished.
    fn project(&self, q: &[f64], tol: f64) -> Result<Vec<f64>> {
        if self.max_violation(q) <= 0.0 {
            return Ok(q.to_vec());
        }
        let mut x = q.to_vec();
        let mut incr = vec![vec![0.0; q.len()]; self.a.len()];
        for _ in 0..DYKSTRA_MAX_ITER {
            let prev = x.clone();
            let mut incr_change = 0.0;
            for ((row, &bi), p) in self.a.iter().zip(&self.b).zip(incr.iter_mut()) {
                let y: Vec<f64> = x.iter().zip(p.iter()).map(|(xv, pv)| xv + pv).collect();
                let nn = norm2_sq(row);
                let excess = dot(row, &y) - bi;
                let proj: Vec<f64> = if nn > 0.0 && excess > 0.0 {
                    y.iter().zip(row).map(|(yv, av)| yv - excess / nn * av).collect()
                } else {
                    y.clone()
                };
                for ((pv, yv), zv) in p.iter_mut().zip(&y).zip(&proj) {
                    let next = yv - zv;
                    incr_change += (next - *pv) * (next - *pv);
                    *pv = next;
                }
                x = proj;
            }
            let moved = x
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if moved < tol && incr_change.sqrt() < tol && self.max_violation(&x) <= tol {
                return Ok(self.polish(q, x));
            }
        }
        Err(Error::MaxIterations(DYKSTRA_MAX_ITER))
    }

    /// Exact projection onto the facets that are (nearly) active at the
    /// Dykstra iterate, kept only if it satisfies the KKT conditions.
    fn polish(&self, q: &[f64], x: Vec<f64>) -> Vec<f64> {
        let band = 1e-6 * (1.0 + norm2(q));
        let active: Vec<usize> = (0..self.a.len())
            .filter(|&i| dot(&self.a[i], &x) - self.b[i] >= -band)
            .collect();
        if active.is_empty() || active.len() > q.len() {
            return x;
        }
        let gram: Vec<Vec<f64>> = active
            .iter()
            .map(|&i| active.iter().map(|&j| dot(&self.a[i], &self.a[j])).collect())
            .collect();
        let rhs: Vec<f64> = active.iter().map(|&i| dot(&self.a[i], q) - self.b[i]).collect();
        let Some(lambda) = solve_dense(gram, rhs) else {
            return x;
        };
        if lambda.iter().any(|&l| l < 0.0) {
            return x;
        }
        let mut u = q.to_vec();
        for (&i, &l) in active.iter().zip(&lambda) {
            for (uk, ak) in u.iter_mut().zip(&self.a[i]) {
                *uk -= l * ak;
            }
        }
        if self.max_violation(&u) <= self.max_violation(&x).max(1e-12) {
            u
        } else {
            x
        }
    }
}

/// A nonempty compact convex admissible input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InputSetRepr", into = "InputSetRepr")]
pub enum InputSet {
    Ball(Ball),
    Box(BoxSet),
    Polyhedron(Polyhedron),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum InputSetRepr {
    Ball {
        gamma: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Polyhedron {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

impl TryFrom<InputSetRepr> for InputSet {
    type Error = Error;

    fn try_from(r: InputSetRepr) -> Result<Self> {
        match r {
            InputSetRepr::Ball { gamma, dim } => InputSet::ball(gamma, dim),
            InputSetRepr::Box { lo, hi } => InputSet::boxed(lo, hi),
            InputSetRepr::Polyhedron { a, b } => InputSet::polyhedron(a, b),
        }
    }
}

impl From<InputSet> for InputSetRepr {
    fn from(s: InputSet) -> Self {
        match s {
            InputSet::Ball(b) => InputSetRepr::Ball {
                gamma: b.gamma,
                dim: b.dim,
            },
            InputSet::Box(b) => InputSetRepr::Box { lo: b.lo, hi: b.hi },
            InputSet::Polyhedron(p) => InputSetRepr::Polyhedron { a: p.a, b: p.b },
        }
    }
}

impl InputSet {
    /// Origin-centered Euclidean ball of radius `gamma` in `dim` dimensions.
    pub fn ball(gamma: f64, dim: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidSet(format!("ball radius must be positive, got {gamma}")));
        }
        if dim == 0 {
            return Err(Error::InvalidSet("ball dimension must be positive".into()));
        }
        Ok(InputSet::Ball(Ball { gamma, dim }))
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidSet(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if !all_finite(&lo) || !all_finite(&hi) {
            return Err(Error::InvalidSet("box bounds must be finite".into()));
        }
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(Error::InvalidSet(format!(
                "box is empty in component {i}: {} > {}",
                lo[i], hi[i]
            )));
        }
        Ok(InputSet::Box(BoxSet { lo, hi }))
    }

    /// `{u : A u <= b}`, checked nonempty by an LP feasibility probe and
    /// bounded by support probes along every signed axis plus random
    /// directions.
    pub fn polyhedron(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let m = a.first().map_or(0, Vec::len);
        if a.is_empty() || m == 0 || a.len() != b.len() || a.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidSet("polyhedron A must be p x m with p = len(b)".into()));
        }
        if !a.iter().all(|r| all_finite(r)) || !all_finite(&b) {
            return Err(Error::InvalidSet("polyhedron data must be finite".into()));
        }
        let feas = solve_simplex(&LpProblem {
            c: vec![0.0; m],
            g_mat: a.clone(),
            g: b.clone(),
        })?;
        if feas.status != LpStatus::Optimal {
            return Err(Error::InvalidSet("polyhedron is empty".into()));
        }
        let mut poly = Polyhedron {
            a,
            b,
            center: feas.x,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let mut probes: Vec<Vec<f64>> = Vec::with_capacity(2 * m + BOUNDEDNESS_PROBES);
        for i in 0..m {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; m];
                d[i] = s;
                probes.push(d);
            }
        }
        for _ in 0..BOUNDEDNESS_PROBES {
            probes.push((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        for d in &probes {
            match poly.support(d) {
                Ok(_) => {}
                Err(Error::LpUnbounded) => {
                    return Err(Error::InvalidSet(format!("polyhedron is unbounded along {d:?}")))
                }
                Err(e) => return Err(e),
            }
        }

        // Chebyshev center: max r s.t. a_i·u + |a_i| r <= b_i, r >= 0.
        let mut g_mat: Vec<Vec<f64>> = poly
            .a
            .iter()
            .map(|row| {
                let mut r = row.clone();
                r.push(norm2(row));
                r
            })
            .collect();
        let mut neg_r = vec![0.0; m + 1];
        neg_r[m] = -1.0;
        g_mat.push(neg_r);
        let mut g = poly.b.clone();
        g.push(0.0);
        let mut c = vec![0.0; m + 1];
        c[m] = -1.0;
        let cheb = solve_simplex(&LpProblem { c, g_mat, g })?;
        if cheb.status == LpStatus::Optimal {
            poly.center = cheb.x[..m].to_vec();
        }
        Ok(InputSet::Polyhedron(poly))
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSet::Ball(b) => b.dim,
            InputSet::Box(b) => b.lo.len(),
            InputSet::Polyhedron(p) => p.center.len(),
        }
    }

    fn check_dir(&self, d: &[f64], context: &'static str) -> Result<()> {
        if d.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                got: d.len(),
            });
        }
        if !all_finite(d) {
            return Err(Error::NonFinite(context));
        }
        Ok(())
    }

    /// `σ(d)` together with a maximizer `u⋆ ∈ U`, `d·u⋆ = σ(d)`.
    pub fn support(&self, d: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dir(d, "support direction")?;
        let zero = d.iter().all(|&v| v == 0.0);
        match self {
            InputSet::Ball(b) => {
                let n = norm2(d);
                if zero {
                    return Ok((0.0, vec![0.0; b.dim]));
                }
                Ok((b.gamma * n, d.iter().map(|v| b.gamma * v / n).collect()))
            }
            InputSet::Box(bx) => {
                if zero {
                    let mid = bx.lo.iter().zip(&bx.hi).map(|(l, h)| 0.5 * (l + h)).collect();
                    return Ok((0.0, mid));
                }
                let u: Vec<f64> = d
                    .iter()
                    .zip(bx.lo.iter().zip(&bx.hi))
                    .map(|(&di, (&l, &h))| if di < 0.0 { l } else { h })
                    .collect();
                let sigma = d
                    .iter()
                    .zip(bx.lo.iter().zip(&bx.hi))
                    .map(|(&di, (&l, &h))| (di * h).max(di * l))
                    .sum();
                Ok((sigma, u))
            }
            InputSet::Polyhedron(p) => {
                if zero {
                    return Ok((0.0, p.center.clone()));
                }
                p.support(d)
            }
        }
    }

    pub fn support_value(&self, d: &[f64]) -> Result<f64> {
        self.support(d).map(|(s, _)| s)
    }

    pub fn support_point(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.support(d).map(|(_, u)| u)
    }

    /// Euclidean projection of `q` onto the set.
    pub fn project(&self, q: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.check_dir(q, "projection point")?;
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("projection tolerance must be positive, got {tol}")));
        }
        Ok(match self {
            InputSet::Ball(b) => {
                let n = norm2(q);
                let s = if n > b.gamma { b.gamma / n } else { 1.0 };
                q.iter().map(|v| v * s).collect()
            }
            InputSet::Box(bx) => q
                .iter()
                .zip(bx.lo.iter().zip(&bx.hi))
                .map(|(&v, (&l, &h))| v.clamp(l, h))
                .collect(),
            InputSet::Polyhedron(p) => p.project(q, tol)?,
        })
    }

    /// Largest violation of the defining inequalities (zero inside the set).
    pub fn violation(&self, u: &[f64]) -> f64 {
        if u.len() != self.dim() {
            return f64::INFINITY;
        }
        match self {
            InputSet::Ball(b) => (norm2(u) - b.gamma).max(0.0),
            InputSet::Box(bx) => u
                .iter()
                .zip(bx.lo.iter().zip(&bx.hi))
                .map(|(&v, (&l, &h))| (l - v).max(v - h))
                .fold(0.0, f64::max),
            InputSet::Polyhedron(p) => p
                .a
                .iter()
                .zip(&p.b)
                .map(|(row, &bi)| dot(row, u) - bi)
                .fold(0.0, f64::max),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        let v = self.violation(u);
        v.is_finite() && v <= tol
    }

    /// Axis-aligned box containing the set.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.dim();
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            hi.push(self.support_value(&e)?);
            e[i] = -1.0;
            lo.push(-self.support_value(&e)?);
        }
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> InputSet {
        InputSet::polyhedron(
            vec![
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
            ],
            vec![1.0; 4],
        )
        .unwrap()
    }

    #[test]
    fn ball_support() {
        let s = InputSet::ball(15.0, 1).unwrap();
        assert_eq!(s.support_value(&[-1.0]).unwrap(), 15.0);
        assert_eq!(s.support_point(&[-1.0]).unwrap(), vec![-15.0]);
    }

    #[test]
    fn box_support() {
        let s = InputSet::boxed(vec![-6.0], vec![0.8]).unwrap();
        assert_eq!(s.support_value(&[-1.0]).unwrap(), 6.0);
        assert_eq!(s.support_point(&[-1.0]).unwrap(), vec![-6.0]);
    }

    #[test]
    fn box_tie_prefers_hi() {
        let s = InputSet::boxed(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap();
        let u = s.support_point(&[0.0, 1.0]).unwrap();
        assert_eq!(u, vec![2.0, 3.0]);
        // vertices (0,0),(2,0),(0,3),(2,3) give d·u in {0,0,3,3}
        assert_eq!(dot(&[0.0, 1.0], &u), 3.0);
    }

    #[test]
    fn polyhedron_support() {
        // vertex oracle over (±1, ±1): 2+1 = 3 is the max
        let s = square();
        assert!((s.support_value(&[2.0, 1.0]).unwrap() - 3.0).abs() < 1e-12);
        let u = s.support_point(&[1.0, 1.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12 && (u[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_direction() {
        let b = InputSet::boxed(vec![-6.0], vec![0.8]).unwrap();
        assert_eq!(b.support(&[0.0]).unwrap(), (0.0, vec![-2.6]));
        let ball = InputSet::ball(2.0, 2).unwrap();
        assert_eq!(ball.support(&[0.0, 0.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        let (s, c) = square().support(&[0.0, 0.0]).unwrap();
        assert_eq!(s, 0.0);
        assert!(c.iter().all(|v| v.abs() < 1e-12), "Chebyshev center of the square is the origin");
    }

    #[test]
    fn projections() {
        let b = InputSet::boxed(vec![-6.0], vec![0.8]).unwrap();
        assert_eq!(b.project(&[2.0], 1e-9).unwrap(), vec![0.8]);
        let ball = InputSet::ball(15.0, 1).unwrap();
        assert_eq!(ball.project(&[30.0], 1e-9).unwrap(), vec![15.0]);
        let p = square().project(&[2.0, 0.5], 1e-9).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn projection_matches_grid_minimizer() {
        // dense grid minimization of |u - q| over the square
        let q = [2.0, 0.5];
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        let n = 401;
        for i in 0..n {
            for j in 0..n {
                let u = [-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64];
                let dd = (u[0] - q[0]).powi(2) + (u[1] - q[1]).powi(2);
                if dd < best.0 {
                    best = (dd, u);
                }
            }
        }
        let p = square().project(&q, 1e-9).unwrap();
        assert!((p[0] - best.1[0]).abs() <= 0.005 && (p[1] - best.1[1]).abs() <= 0.005);
    }

    #[test]
    fn membership() {
        let b = InputSet::boxed(vec![-6.0], vec![0.8]).unwrap();
        assert!(b.contains(&[0.8], 1e-9));
        let ball = InputSet::ball(15.0, 1).unwrap();
        assert!(!ball.contains(&[15.0 + 1e-6], 1e-9));
        assert!(square().contains(&[0.0, 0.0], 0.0));
        assert!(!square().contains(&[0.0], 0.0));
    }

    #[test]
    fn construction_checks() {
        assert!(InputSet::ball(0.0, 1).is_err());
        assert!(InputSet::boxed(vec![1.0], vec![0.0]).is_err());
        // half-plane u1 <= 1 is unbounded
        assert!(InputSet::polyhedron(vec![vec![1.0, 0.0]], vec![1.0]).is_err());
        // u <= -1 and -u <= 0 is empty
        assert!(InputSet::polyhedron(vec![vec![1.0], vec![-1.0]], vec![-1.0, 0.0]).is_err());
    }

    #[test]
    fn errors_on_bad_direction() {
        let b = InputSet::ball(1.0, 2).unwrap();
        assert!(matches!(b.support_value(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(matches!(b.support_value(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn json_round_trip() {
        let s: InputSet =
            serde_json::from_str(r#"{"type":"polyhedron","A":[[1,0],[-1,0],[0,1],[0,-1]],"b":[1,1,1,1]}"#)
                .unwrap();
        assert_eq!(s.dim(), 2);
        let b: InputSet = serde_json::from_str(r#"{"type":"box","lo":[-6],"hi":[0.8]}"#).unwrap();
        let text = serde_json::to_string(&b).unwrap();
        assert_eq!(text, r#"{"type":"box","lo":[-6.0],"hi":[0.8]}"#);
        let g: InputSet = serde_json::from_str(r#"{"type":"ball","gamma":15.0}"#).unwrap();
        assert_eq!(g.dim(), 1);
        assert!(serde_json::from_str::<InputSet>(r#"{"type":"ball","gamma":-1}"#).is_err());
    }
}
