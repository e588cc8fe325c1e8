//! Fixed-step closed-loop simulation.
//!
//! The controller is evaluated once per step and held over `[t, t + dt]`
//! while classical RK4 integrates `ẋ = f(x) + e(t) + g(x)(u + ω(t))`, with the
//! perturbation and exogenous drift evaluated at the stage times.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, norm2_sq};
use crate::plants::{case_study, CaseStudy, ControllerVariant};
use crate::qp_filter::{solve_safety_qp, QpInstance, QpStatus, DEFAULT_QP_TOL};
use crate::tissf::{halfspace_rhs, lie_terms_at, robustness_margin, ClassK};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Containment tolerance when counting input-bound violations.
pub const INPUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: String,
    pub controller: ControllerVariant,
    /// Defaults to the case study's initial state.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Defaults to the case study's horizon.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub alpha: ClassK,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn one() -> usize {
    1
}

/// Fully resolved run parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub controller: ControllerVariant,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl RunSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "t_end must be >= dt, got t_end={} dt={}",
                self.t_end, self.dt
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: n,
                got: self.x0.len(),
            });
        }
        if !all_finite(&self.x0) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(())
    }

    /// Number of integration steps; the run ends at `n_steps · dt`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<(CaseStudy, RunSpec)> {
        let case = case_study(&self.plant, self.alpha)?;
        let spec = RunSpec {
            controller: self.controller,
            x0: self.x0.clone().unwrap_or_else(|| case.default_x0.clone()),
            t_end: self.t_end.unwrap_or(case.default_t_end),
            dt: self.dt,
            record_every: self.record_every,
        };
        spec.validate(case.plant.state_dim())?;
        Ok((case, spec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub h: f64,
    pub h_plus_zeta: f64,
    pub c: f64,
    pub d: Vec<f64>,
    pub eps: f64,
    /// `None` for the closed-form laws.
    pub qp_status: Option<QpStatus>,
    pub mu: f64,
    /// `c + d·u − ‖d‖²/ε`
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_records: usize,
    pub min_h: f64,
    pub min_h_plus_zeta: f64,
    pub max_abs_u: Vec<f64>,
    pub min_u: Vec<f64>,
    pub max_u: Vec<f64>,
    pub min_state: Vec<f64>,
    pub input_violations: usize,
    pub qp_infeasible: usize,
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub plant: String,
    pub controller: ControllerVariant,
    pub dt: f64,
    pub record_every: usize,
    pub records: Vec<Record>,
}

impl TrajectoryLog {
    /// Statistics over the logged records. Input violations are counted
    /// against `set` at tolerance [`INPUT_TOL`].
    pub fn summary(&self, set: &crate::InputSet) -> Summary {
        let n = self.records.first().map_or(0, |r| r.x.len());
        let m = self.records.first().map_or(0, |r| r.u.len());
        let mut s = Summary {
            n_records: self.records.len(),
            min_h: f64::INFINITY,
            min_h_plus_zeta: f64::INFINITY,
            max_abs_u: vec![0.0; m],
            min_u: vec![f64::INFINITY; m],
            max_u: vec![f64::NEG_INFINITY; m],
            min_state: vec![f64::INFINITY; n],
            input_violations: 0,
            qp_infeasible: 0,
            min_slack: f64::INFINITY,
        };
        for r in &self.records {
            s.min_h = s.min_h.min(r.h);
            s.min_h_plus_zeta = s.min_h_plus_zeta.min(r.h_plus_zeta);
            s.min_slack = s.min_slack.min(r.slack);
            for (j, &u) in r.u.iter().enumerate() {
                s.max_abs_u[j] = s.max_abs_u[j].max(u.abs());
                s.min_u[j] = s.min_u[j].min(u);
                s.max_u[j] = s.max_u[j].max(u);
            }
            for (j, &x) in r.x.iter().enumerate() {
                s.min_state[j] = s.min_state[j].min(x);
            }
            if !set.contains(&r.u, INPUT_TOL) {
                s.input_violations += 1;
            }
            if r.qp_status == Some(QpStatus::InfeasibleCertificate) {
                s.qp_infeasible += 1;
            }
        }
        s
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.records.first().map_or(0, |r| r.x.len());
        let m = self.records.first().map_or(0, |r| r.u.len());
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.extend((1..=m).map(|i| format!("u{i}")));
        h.extend(["h", "h_plus_zeta", "c", "eps", "qp_status", "mu", "slack"].map(String::from));
        h
    }
}

impl Record {
    pub fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![self.t.to_string()];
        out.extend(self.x.iter().map(f64::to_string));
        out.extend(self.u.iter().map(f64::to_string));
        out.push(self.h.to_string());
        out.push(self.h_plus_zeta.to_string());
        out.push(self.c.to_string());
        out.push(self.eps.to_string());
        out.push(
            match self.qp_status {
                None => "none",
                Some(QpStatus::Optimal) => "optimal",
                Some(QpStatus::InfeasibleCertificate) => "infeasible",
            }
            .to_string(),
        );
        out.push(self.mu.to_string());
        out.push(self.slack.to_string());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error("safety QP infeasible at t = {t}, x = {state:?}")]
    ScenarioFailure {
        t: f64,
        state: Vec<f64>,
        log: Box<TrajectoryLog>,
    },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64, log: Box<TrajectoryLog> },
}

impl SimError {
    pub fn partial_log(&self) -> Option<&TrajectoryLog> {
        match self {
            SimError::Config(_) => None,
            SimError::ScenarioFailure { log, .. } | SimError::NonFiniteState { log, .. } => Some(log),
        }
    }
}

/// Evaluates the controller at `(t, x)` and returns the record for it.
fn control(case: &CaseStudy, controller: &ControllerVariant, t: f64, x: &[f64]) -> Result<Record> {
    let lt = lie_terms_at(&case.plant, &case.barrier, x, t)?;
    let params = controller.params();
    let (eps, _) = params.epsilon_flagged(lt.h);
    let k = case.nominal.eval(x);
    let rhs = halfspace_rhs(lt.c, &lt.d, eps);
    let (u, qp_status, mu) = match controller {
        ControllerVariant::LpQpFilter { .. } | ControllerVariant::TrialParams { .. } => {
            let inst = QpInstance::new(k, lt.d.clone(), rhs, case.input_set.clone())?;
            let res = solve_safety_qp(&inst, DEFAULT_QP_TOL)?;
            (res.u_star, Some(res.status), res.mu)
        }
        ControllerVariant::BaselineFixedForm { .. } => (axpy(&k, 1.0 / eps, &lt.d), None, 0.0),
        ControllerVariant::BaselineSaturated { .. } => {
            let raw = axpy(&k, 1.0 / eps, &lt.d);
            (case.input_set.project(&raw, crate::convex_sets::PROJECTION_TOL)?, None, 0.0)
        }
    };
    let du: f64 = lt.d.iter().zip(&u).map(|(a, b)| a * b).sum();
    let slack = lt.c + du - norm2_sq(&lt.d) / eps;
    let zeta = robustness_margin(params, &case.barrier.alpha, lt.h, case.disturbance.delta);
    Ok(Record {
        t,
        x: x.to_vec(),
        u,
        h: lt.h,
        h_plus_zeta: lt.h + zeta,
        c: lt.c,
        d: lt.d,
        eps,
        qp_status,
        mu,
        slack,
    })
}

fn rk4_step(case: &CaseStudy, t: f64, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    let field = |s: f64, y: &[f64]| {
        let w: Vec<f64> = u.iter().zip(case.disturbance.at(s)).map(|(a, b)| a + b).collect();
        case.plant.vector_field(s, y, &w)
    };
    let k1 = field(t, x);
    let k2 = field(t + 0.5 * dt, &axpy(x, 0.5 * dt, &k1));
    let k3 = field(t + 0.5 * dt, &axpy(x, 0.5 * dt, &k2));
    let k4 = field(t + dt, &axpy(x, dt, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Runs a registered scenario.
pub fn run_scenario(config: &ScenarioConfig) -> std::result::Result<TrajectoryLog, SimError> {
    let (case, spec) = config.resolve()?;
    run_case(&case, &spec)
}

/// Runs an arbitrary case study.
pub fn run_case(case: &CaseStudy, spec: &RunSpec) -> std::result::Result<TrajectoryLog, SimError> {
    spec.validate(case.plant.state_dim())?;
    let n_steps = spec.n_steps();
    let mut log = TrajectoryLog {
        plant: case.label().to_string(),
        controller: spec.controller,
        dt: spec.dt,
        record_every: spec.record_every,
        records: Vec::with_capacity(n_steps / spec.record_every + 1),
    };
    let mut x = spec.x0.clone();
    let mut warned_negative = false;
    for k in 0..=n_steps {
        let t = k as f64 * spec.dt;
        let rec = match control(case, &spec.controller, t, &x) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(SimError::NonFiniteState { t, log: Box::new(log) }),
            Err(e) => return Err(e.into()),
        };
        if rec.qp_status == Some(QpStatus::InfeasibleCertificate) {
            log.records.push(rec);
            return Err(SimError::ScenarioFailure {
                t,
                state: x,
                log: Box::new(log),
            });
        }
        if k == n_steps {
            if k % spec.record_every == 0 {
                log.records.push(rec);
            }
            break;
        }
        let mut next = rk4_step(case, t, &x, &rec.u, spec.dt);
        if k % spec.record_every == 0 {
            log.records.push(rec);
        }
        if let Some(lead) = &case.lead {
            if lead.at(t + spec.dt).0 == 0.0 {
                next[lead.state_index] = 0.0;
            }
        }
        if !all_finite(&next) {
            return Err(SimError::NonFiniteState {
                t: t + spec.dt,
                log: Box::new(log),
            });
        }
        if case.lead.is_some() && next[1] < 0.0 && !warned_negative {
            log::warn!("ego velocity negative ({:.4}) at t = {:.3}", next[1], t + spec.dt);
            warned_negative = true;
        }
        x = next;
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub terminal_state: Vec<f64>,
    /// Euclidean distance to the terminal state of the finest run; zero for the finest.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    /// Sorted from coarsest to finest step.
    pub rows: Vec<ConvergenceRow>,
    /// Consecutive error ratios `error[i] / error[i + 1]` over the non-finest rows.
    pub ratios: Vec<f64>,
}

/// Runs the same scenario at each step size and compares terminal states
/// against the finest run.
pub fn convergence_probe(
    case: &CaseStudy,
    spec: &RunSpec,
    dt_list: &[f64],
) -> std::result::Result<ConvergenceTable, SimError> {
    if dt_list.len() < 2 {
        return Err(Error::InvalidArgument("convergence probe needs at least two step sizes".into()).into());
    }
    let mut dts = dt_list.to_vec();
    dts.sort_by(|a, b| b.total_cmp(a));
    let mut terminals = Vec::with_capacity(dts.len());
    for &dt in &dts {
        let run = RunSpec {
            dt,
            record_every: 1,
            ..spec.clone()
        };
        let log = run_case(case, &run)?;
        terminals.push(log.records.last().expect("at least one record").x.clone());
    }
    let finest = terminals.last().expect("nonempty").clone();
    let rows: Vec<ConvergenceRow> = dts
        .iter()
        .zip(terminals)
        .map(|(&dt, x)| ConvergenceRow {
            dt,
            error: crate::linalg::dist2(&x, &finest),
            terminal_state: x,
        })
        .collect();
    let ratios = rows[..rows.len() - 1]
        .windows(2)
        .map(|w| w[0].error / w[1].error)
        .collect();
    Ok(ConvergenceTable { rows, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::NominalController;
    use crate::synthesis::DomainBox;
    use crate::tissf::{BarrierSpec, Disturbance, PlantSpec, TuningParams};
    use crate::InputSet;
    use std::sync::Arc;

    pub(crate) fn linear_case(a: f64) -> CaseStudy {
        CaseStudy {
            plant: PlantSpec::new(
                "linear",
                1,
                1,
                Arc::new(move |x: &[f64]| vec![a * x[0]]),
                Arc::new(|_: &[f64]| vec![vec![0.0]]),
            ),
            barrier: BarrierSpec::new(
                "one",
                Arc::new(|_: &[f64]| 1.0),
                Arc::new(|_: &[f64]| vec![0.0]),
                ClassK::default(),
            ),
            nominal: NominalController::new(Arc::new(|_: &[f64]| vec![0.0])),
            disturbance: Disturbance::zero(1),
            input_set: InputSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
            domain: DomainBox::new(vec![-1.0], vec![1.0]).unwrap(),
            default_x0: vec![1.0],
            default_t_end: 1.0,
            lead: None,
        }
    }

    fn spec(x0: f64, t_end: f64, dt: f64, record_every: usize) -> RunSpec {
        RunSpec {
            controller: ControllerVariant::BaselineFixedForm {
                params: TuningParams::from_eps0(1.0, 0.1).unwrap(),
            },
            x0: vec![x0],
            t_end,
            dt,
            record_every,
        }
    }

    #[test]
    fn equilibrium_is_constant() {
        let log = run_case(&linear_case(0.0), &spec(0.7, 2.0, 1e-2, 1)).unwrap();
        assert!(log.records.iter().all(|r| r.x == vec![0.7]));
    }

    #[test]
    fn record_count() {
        let log = run_case(&linear_case(-1.0), &spec(1.0, 1.0, 1e-2, 3)).unwrap();
        assert_eq!(log.records.len(), 100 / 3 + 1);
        let log = run_case(&linear_case(-1.0), &spec(1.0, 0.3, 0.1, 1)).unwrap();
        assert_eq!(log.records.len(), 4);
    }

    #[test]
    fn rk4_matches_exponential() {
        let log = run_case(&linear_case(-1.0), &spec(1.0, 1.0, 1e-2, 1)).unwrap();
        let last = log.records.last().unwrap();
        assert!((last.t - 1.0).abs() < 1e-12);
        assert!((last.x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn probe_needs_two_steps() {
        let r = convergence_probe(&linear_case(-1.0), &spec(1.0, 1.0, 1e-2, 1), &[1e-2]);
        assert!(matches!(r, Err(SimError::Config(Error::InvalidArgument(_)))));
    }

    #[test]
    fn invalid_run_specs() {
        let c = linear_case(-1.0);
        assert!(run_case(&c, &spec(1.0, 0.0, 1e-3, 1)).is_err());
        assert!(run_case(&c, &spec(1.0, 1.0, -1e-3, 1)).is_err());
        assert!(run_case(&c, &spec(1.0, 1.0, 1e-3, 0)).is_err());
        assert!(run_case(&c, &spec(f64::NAN, 1.0, 1e-3, 1)).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let r = run_case(&linear_case(1e4), &spec(1.0, 10.0, 0.1, 1));
        match r {
            Err(SimError::NonFiniteState { log, .. }) => assert!(!log.records.is_empty()),
            other => panic!("expected NonFiniteState, got {other:?}"),
        }
    }
}
