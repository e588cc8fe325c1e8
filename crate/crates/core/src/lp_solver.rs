//! Dense linear programming.
//!
//! [`solve_simplex`] is a two-phase primal simplex on a dense tableau with
//! Bland's anti-cycling rule, used for polyhedral support values.
//! [`solve_2d`] solves two-variable problems exactly by vertex enumeration
//! and is what the tuning synthesis uses for the `(ln eps0, lambda)` LP.

use crate::error::{Error, Result};
use crate::linalg::dot;
use serde::{Deserialize, Serialize};

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Tolerance for reporting a constraint as active.
pub const TIGHT_TOL: f64 = 1e-8;
/// Smallest admissible pivot magnitude.
pub const PIVOT_TOL: f64 = 1e-12;

/// `min c·x  s.t.  G x <= g`, with `x` free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub g_mat: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

impl LpProblem {
    pub fn new(c: Vec<f64>, g_mat: Vec<Vec<f64>>, g: Vec<f64>) -> Result<Self> {
        let p = LpProblem { c, g_mat, g };
        p.validate()?;
        Ok(p)
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        if self.g_mat.len() != self.g.len() {
            return Err(Error::DimensionMismatch {
                context: "LP rows",
                expected: self.g_mat.len(),
                got: self.g.len(),
            });
        }
        for row in &self.g_mat {
            if row.len() != self.c.len() {
                return Err(Error::DimensionMismatch {
                    context: "LP row length",
                    expected: self.c.len(),
                    got: row.len(),
                });
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("LP constraint matrix"));
            }
        }
        if !self.c.iter().chain(&self.g).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("LP data"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point; empty unless `status == Optimal`.
    pub x: Vec<f64>,
    /// `+inf` when infeasible, `-inf` when unbounded.
    pub objective: f64,
    pub active_rows: Vec<usize>,
}

impl LpSolution {
    fn infeasible() -> Self {
        LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            active_rows: Vec::new(),
        }
    }

    fn unbounded() -> Self {
        LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            active_rows: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

struct Tableau {
    // rows x (cols + 1); last column is the right-hand side
    rows: Vec<Vec<f64>>,
    // reduced-cost row, same width; last entry is -objective
    obj: Vec<f64>,
    basis: Vec<usize>,
    n_cols: usize,
}

enum PivotOutcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn set_costs(&mut self, cost: &[f64]) {
        let width = self.n_cols + 1;
        let mut obj = vec![0.0; width];
        obj[..self.n_cols].copy_from_slice(cost);
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                for (o, v) in obj.iter_mut().zip(row) {
                    *o -= cb * v;
                }
            }
        }
        self.obj = obj;
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let pv = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= pv;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.obj[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Runs Bland-rule simplex iterations over columns `< allowed_cols`.
    fn run(&mut self, allowed_cols: usize) -> Result<PivotOutcome> {
        let cap = 200 * (self.rows.len() + self.n_cols) + 1000;
        for _ in 0..cap {
            let entering = (0..allowed_cols).find(|&j| self.obj[j] < -FEAS_TOL);
            let Some(col) = entering else {
                return Ok(PivotOutcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[col];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = row[self.n_cols] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(PivotOutcome::Unbounded);
            };
            if self.rows[r][col].abs() < PIVOT_TOL {
                return Err(Error::NumericalBreakdown(format!(
                    "pivot {:e} below tolerance",
                    self.rows[r][col]
                )));
            }
            self.pivot(r, col);
        }
        Err(Error::NumericalBreakdown(format!(
            "no convergence within {cap} pivots"
        )))
    }
}

/// Global optimum of `min c·x s.t. G x <= g` by two-phase primal simplex.
///
/// Free variables are split as `x = x⁺ - x⁻`; every row gets a slack and rows
/// with negative right-hand side get an artificial for phase one.
pub fn solve_simplex(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let n = p.n_vars();
    let m_rows = p.g.len();
    let n_art = p.g.iter().filter(|&&v| v < 0.0).count();
    let n_struct = 2 * n + m_rows;
    let n_cols = n_struct + n_art;

    let mut rows = Vec::with_capacity(m_rows);
    let mut basis = Vec::with_capacity(m_rows);
    let mut art = n_struct;
    for (i, (grow, &gi)) in p.g_mat.iter().zip(&p.g).enumerate() {
        let sign = if gi < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; n_cols + 1];
        for j in 0..n {
            row[j] = sign * grow[j];
            row[n + j] = -sign * grow[j];
        }
        row[2 * n + i] = sign;
        row[n_cols] = sign * gi;
        if gi < 0.0 {
            row[art] = 1.0;
            basis.push(art);
            art += 1;
        } else {
            basis.push(2 * n + i);
        }
        rows.push(row);
    }
    let mut tab = Tableau {
        rows,
        obj: Vec::new(),
        basis,
        n_cols,
    };

    if n_art > 0 {
        let mut cost = vec![0.0; n_cols];
        cost[n_struct..].iter_mut().for_each(|c| *c = 1.0);
        tab.set_costs(&cost);
        if let PivotOutcome::Unbounded = tab.run(n_cols)? {
            return Err(Error::NumericalBreakdown("phase one unbounded".into()));
        }
        let infeas = -tab.obj[n_cols];
        let scale = 1.0 + p.g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if infeas > FEAS_TOL * scale {
            return Ok(LpSolution::infeasible());
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= n_struct {
                let col = (0..n_struct).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => tab.pivot(r, j),
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    let mut cost = vec![0.0; n_cols];
    for j in 0..n {
        cost[j] = p.c[j];
        cost[n + j] = -p.c[j];
    }
    tab.set_costs(&cost);
    if let PivotOutcome::Unbounded = tab.run(n_struct)? {
        return Ok(LpSolution::unbounded());
    }

    let mut x = vec![0.0; n];
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        let v = row[n_cols];
        if b < n {
            x[b] += v;
        } else if b < 2 * n {
            x[b - n] -= v;
        }
    }
    let mut active_rows = Vec::new();
    for (i, (grow, &gi)) in p.g_mat.iter().zip(&p.g).enumerate() {
        let lhs = dot(grow, &x);
        let scale = 1.0 + gi.abs();
        if lhs - gi > 1e-6 * scale {
            return Err(Error::NumericalBreakdown(format!(
                "row {i} violated by {:e} after pivoting",
                lhs - gi
            )));
        }
        if (lhs - gi).abs() <= TIGHT_TOL * scale {
            active_rows.push(i);
        }
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: dot(&p.c, &x),
        x,
        active_rows,
    })
}

/// `a1*y1 + a2*y2 >= rhs`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint2 {
    pub a1: f64,
    pub a2: f64,
    pub rhs: f64,
}

impl Constraint2 {
    pub fn new(a1: f64, a2: f64, rhs: f64) -> Self {
        Constraint2 { a1, a2, rhs }
    }

    pub fn slack(&self, y: [f64; 2]) -> f64 {
        self.a1 * y[0] + self.a2 * y[1] - self.rhs
    }

    fn holds(&self, y: [f64; 2]) -> bool {
        self.slack(y) >= -FEAS_TOL * (1.0 + self.rhs.abs())
    }
}

struct Candidate {
    obj: f64,
    y: [f64; 2],
}

/// Exact two-variable LP: `min w·y` over `{y : a_i·y >= rhs_i}` with both
/// variables free.
///
/// Candidates are every pairwise boundary intersection plus the foot of the
/// origin on each boundary line (covers feasible sets without vertices).
/// Candidates are visited in order of objective and the first feasible one is
/// optimal; objective ties resolve to the lexicographically smallest `(y1, y2)`.
pub fn solve_2d(constraints: &[Constraint2], objective: [f64; 2]) -> Result<LpSolution> {
    if constraints.is_empty() {
        return Err(Error::InvalidArgument(
            "two-variable LP needs at least one constraint".into(),
        ));
    }
    if !objective.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("LP objective"));
    }
    let mut live: Vec<(usize, Constraint2)> = Vec::with_capacity(constraints.len());
    for (i, c) in constraints.iter().enumerate() {
        if !(c.a1.is_finite() && c.a2.is_finite() && c.rhs.is_finite()) {
            return Err(Error::NonFinite("LP constraint"));
        }
        if c.a1 == 0.0 && c.a2 == 0.0 {
            if c.rhs > FEAS_TOL {
                return Err(Error::DegenerateConstraint { index: i, rhs: c.rhs });
            }
            continue;
        }
        live.push((i, *c));
    }
    let obj_of = |y: [f64; 2]| objective[0] * y[0] + objective[1] * y[1];

    if live.is_empty() {
        return Ok(if objective == [0.0, 0.0] {
            LpSolution {
                status: LpStatus::Optimal,
                x: vec![0.0, 0.0],
                objective: 0.0,
                active_rows: Vec::new(),
            }
        } else {
            LpSolution::unbounded()
        });
    }

    let k = live.len();
    let mut cands: Vec<Candidate> = Vec::with_capacity(k * (k - 1) / 2 + k);
    for (_, c) in &live {
        let nn = c.a1 * c.a1 + c.a2 * c.a2;
        let y = [c.rhs * c.a1 / nn, c.rhs * c.a2 / nn];
        cands.push(Candidate { obj: obj_of(y), y });
    }
    for i in 0..k {
        let ci = live[i].1;
        let ni = ci.a1.hypot(ci.a2);
        for (_, cj) in &live[i + 1..] {
            let det = ci.a1 * cj.a2 - ci.a2 * cj.a1;
            if det.abs() <= 1e-12 * ni * cj.a1.hypot(cj.a2) {
                continue;
            }
            let y = [
                (ci.rhs * cj.a2 - cj.rhs * ci.a2) / det,
                (ci.a1 * cj.rhs - cj.a1 * ci.rhs) / det,
            ];
            if y[0].is_finite() && y[1].is_finite() {
                cands.push(Candidate { obj: obj_of(y), y });
            }
        }
    }
    cands.sort_by(|a, b| {
        a.obj
            .total_cmp(&b.obj)
            .then(a.y[0].total_cmp(&b.y[0]))
            .then(a.y[1].total_cmp(&b.y[1]))
    });

    // Feasibility is order-independent; checking the last violated row first
    // rejects most candidates after a single comparison.
    let mut hint = 0usize;
    let mut feasible = |y: [f64; 2]| -> bool {
        if !live[hint].1.holds(y) {
            return false;
        }
        for (idx, (_, c)) in live.iter().enumerate() {
            if !c.holds(y) {
                hint = idx;
                return false;
            }
        }
        true
    };

    let mut best: Option<usize> = None;
    for (idx, cand) in cands.iter().enumerate() {
        if let Some(b) = best {
            let fb = cands[b].obj;
            if cand.obj > fb + 1e-12 * (1.0 + fb.abs()) {
                break;
            }
            let lex_smaller = cand.y[0] < cands[b].y[0]
                || cand.y[0] == cands[b].y[0] && cand.y[1] < cands[b].y[1];
            if lex_smaller && feasible(cand.y) {
                best = Some(idx);
            }
        } else if feasible(cand.y) {
            best = Some(idx);
        }
    }
    let Some(best) = best else {
        return Ok(LpSolution::infeasible());
    };

    // Unbounded iff some extreme ray of the recession cone descends.
    let wn = objective[0].hypot(objective[1]);
    for (_, c) in &live {
        let rays = [[-c.a2, c.a1], [c.a2, -c.a1], [c.a1, c.a2]];
        for r in rays {
            let rn = r[0].hypot(r[1]);
            let descends = obj_of(r) < -1e-12 * wn * rn;
            let in_cone = live.iter().all(|(_, q)| {
                q.a1 * r[0] + q.a2 * r[1] >= -1e-12 * q.a1.hypot(q.a2) * rn
            });
            if descends && in_cone {
                return Ok(LpSolution::unbounded());
            }
        }
    }

    let y = cands[best].y;
    let active_rows = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.a1 != 0.0 || c.a2 != 0.0)
        .filter(|(_, c)| c.slack(y).abs() <= TIGHT_TOL * (1.0 + c.rhs.abs()))
        .map(|(i, _)| i)
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x: y.to_vec(),
        objective: obj_of(y),
        active_rows,
    })
}
