//! Case-study plants: a planar double-integrator-like example and a
//! connected cruise control (CCC) car-following model.

use crate::convex_sets::InputSet;
use crate::error::{Error, Result};
use crate::synthesis::DomainBox;
use crate::tissf::{BarrierSpec, ClassK, Disturbance, PlantSpec, TuningParams, VectorFn, GRADIENT_REL_TOL};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const EXAMPLE1_LABEL: &str = "example1";
pub const CCC_LABEL: &str = "ccc";
pub const REGISTERED: [&str; 2] = [EXAMPLE1_LABEL, CCC_LABEL];

pub mod example1 {
    /// Perturbation amplitude of `ω(t) = MU sin t`.
    pub const MU: f64 = 3.0;
    pub const U_MAX: f64 = 15.0;
    pub const DOMAIN_LO: [f64; 2] = [-5.0, -5.0];
    pub const DOMAIN_HI: [f64; 2] = [5.0, 5.0];
    pub const X0: [f64; 2] = [5.0, 0.0];
    pub const T_END: f64 = 20.0;

    pub fn h(x: &[f64]) -> f64 {
        x[0] - x[1]
    }

    pub fn nominal(x: &[f64]) -> f64 {
        x[0] - 2.0 * x[1] - 1.0
    }
}

pub mod ccc {
    pub const D_SF: f64 = 2.0;
    pub const THETA: f64 = 1.1;
    pub const ETA_C: f64 = 0.6;
    pub const XI: f64 = 0.03;
    pub const ZETA_C: f64 = -0.03;
    pub const OMEGA_C: f64 = -0.03;

    pub const K1: f64 = 0.85;
    pub const K2: f64 = 0.75;
    pub const K_V: f64 = 0.7;
    pub const D_ST: f64 = 7.0;
    pub const V_BAR: f64 = 20.0;

    pub const OMEGA: f64 = 1.2;
    pub const DELTA: f64 = 1.2;
    pub const U_MIN: f64 = -6.0;
    pub const U_MAX: f64 = 0.8;

    pub const LEAD_V0: f64 = 15.0;
    pub const LEAD_T_BRAKE: f64 = 5.0;
    pub const LEAD_DECEL: f64 = 4.0;

    pub const DOMAIN_LO: [f64; 3] = [0.0, 0.0, 0.0];
    pub const DOMAIN_HI: [f64; 3] = [60.0, 20.0, 20.0];
    pub const X0: [f64; 3] = [40.0, 15.0, 15.0];
    pub const T_END: f64 = 20.0;

    /// Safe distance `ĥ(v, v_L)`.
    pub fn h_hat(v: f64, v_l: f64) -> f64 {
        D_SF + THETA * v + ETA_C * v_l + XI * v * v + ZETA_C * v * v_l + OMEGA_C * v_l * v_l
    }

    pub fn dh_hat_dv(v: f64, v_l: f64) -> f64 {
        THETA + 2.0 * XI * v + ZETA_C * v_l
    }

    pub fn dh_hat_dvl(v: f64, v_l: f64) -> f64 {
        ETA_C + ZETA_C * v + 2.0 * OMEGA_C * v_l
    }

    /// Range policy `V_D(D)`.
    pub fn v_desired(d: f64) -> f64 {
        (K_V * (d - D_ST)).max(0.0).min(V_BAR)
    }

    pub fn nominal(x: &[f64]) -> f64 {
        K1 * (v_desired(x[0]) - x[1]) + K2 * (x[2] - x[1])
    }
}

/// Lead vehicle that cruises, then brakes at a constant rate to a stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadProfile {
    /// Index of the lead velocity in the state vector.
    pub state_index: usize,
    pub v0: f64,
    pub t_brake: f64,
    pub decel: f64,
}

impl LeadProfile {
    pub fn ccc() -> Self {
        LeadProfile {
            state_index: 2,
            v0: ccc::LEAD_V0,
            t_brake: ccc::LEAD_T_BRAKE,
            decel: ccc::LEAD_DECEL,
        }
    }

    /// `(v_L(t), a_L(t))`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        if t < self.t_brake {
            return (self.v0, 0.0);
        }
        let v = (self.v0 - self.decel * (t - self.t_brake)).max(0.0);
        (v, if v > 0.0 { -self.decel } else { 0.0 })
    }

    pub fn stop_time(&self) -> f64 {
        self.t_brake + self.v0 / self.decel
    }
}

/// CCC lead profile `(v_L, a_L)` at time `t`.
pub fn lead_velocity(t: f64) -> (f64, f64) {
    LeadProfile::ccc().at(t)
}

/// Everything needed to tune and simulate one case study.
#[derive(Clone, Debug)]
pub struct CaseStudy {
    pub plant: PlantSpec,
    pub barrier: BarrierSpec,
    pub nominal: NominalController,
    pub disturbance: Disturbance,
    pub input_set: InputSet,
    pub domain: DomainBox,
    pub default_x0: Vec<f64>,
    pub default_t_end: f64,
    pub lead: Option<LeadProfile>,
}

#[derive(Clone)]
pub struct NominalController(VectorFn);

impl std::fmt::Debug for NominalController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("NominalController")
    }
}

impl NominalController {
    pub fn new(k: VectorFn) -> Self {
        NominalController(k)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.0)(x)
    }
}

impl CaseStudy {
    pub fn label(&self) -> &str {
        self.plant.label()
    }

    /// Gradient check of the barrier on `n_points` seeded points of the domain.
    pub fn validate(&self, n_points: usize, seed: u64) -> Result<f64> {
        let err = self
            .barrier
            .check_gradient(&self.domain.lo, &self.domain.hi, n_points, seed)?;
        if self.input_set.dim() != self.plant.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input set vs plant input",
                expected: self.plant.input_dim(),
                got: self.input_set.dim(),
            });
        }
        debug_assert!(err <= GRADIENT_REL_TOL);
        Ok(err)
    }
}

pub fn build_example1(alpha: ClassK) -> CaseStudy {
    let plant = PlantSpec::new(
        EXAMPLE1_LABEL,
        2,
        1,
        Arc::new(|x: &[f64]| vec![-x[1], 0.0]),
        Arc::new(|_: &[f64]| vec![vec![0.0], vec![1.0]]),
    );
    let barrier = BarrierSpec::new(
        "x1 - x2",
        Arc::new(example1::h),
        Arc::new(|_: &[f64]| vec![1.0, -1.0]),
        alpha,
    );
    let disturbance = Disturbance::new(example1::MU, Arc::new(|t: f64| vec![example1::MU * t.sin()]))
        .expect("constant bound is valid");
    CaseStudy {
        plant,
        barrier,
        nominal: NominalController::new(Arc::new(|x: &[f64]| vec![example1::nominal(x)])),
        disturbance,
        input_set: InputSet::boxed(vec![-example1::U_MAX], vec![example1::U_MAX]).expect("valid box"),
        domain: DomainBox::new(example1::DOMAIN_LO.to_vec(), example1::DOMAIN_HI.to_vec()).expect("valid domain"),
        default_x0: example1::X0.to_vec(),
        default_t_end: example1::T_END,
        lead: None,
    }
}

/// CCC model with state `(D, v, v_L)`. The design-time drift assumes a
/// cruising lead (`a_L = 0`); the scheduled lead acceleration enters as an
/// exogenous drift.
pub fn build_ccc(alpha: ClassK) -> CaseStudy {
    let lead = LeadProfile::ccc();
    let plant = PlantSpec::new(
        CCC_LABEL,
        3,
        1,
        Arc::new(|x: &[f64]| vec![x[2] - x[1], 0.0, 0.0]),
        Arc::new(|_: &[f64]| vec![vec![0.0], vec![1.0], vec![0.0]]),
    )
    .with_exogenous(Arc::new(move |t: f64, _: &[f64]| vec![0.0, 0.0, lead.at(t).1]));
    let barrier = BarrierSpec::new(
        "D - h_hat(v, v_L)",
        Arc::new(|x: &[f64]| x[0] - ccc::h_hat(x[1], x[2])),
        Arc::new(|x: &[f64]| vec![1.0, -ccc::dh_hat_dv(x[1], x[2]), -ccc::dh_hat_dvl(x[1], x[2])]),
        alpha,
    );
    let disturbance =
        Disturbance::new(ccc::DELTA, Arc::new(|_: f64| vec![ccc::OMEGA])).expect("constant bound is valid");
    CaseStudy {
        plant,
        barrier,
        nominal: NominalController::new(Arc::new(|x: &[f64]| vec![ccc::nominal(x)])),
        disturbance,
        input_set: InputSet::boxed(vec![ccc::U_MIN], vec![ccc::U_MAX]).expect("valid box"),
        domain: DomainBox::new(ccc::DOMAIN_LO.to_vec(), ccc::DOMAIN_HI.to_vec()).expect("valid domain"),
        default_x0: ccc::X0.to_vec(),
        default_t_end: ccc::T_END,
        lead: Some(lead),
    }
}

/// Looks up a registered case study by label.
pub fn case_study(label: &str, alpha: ClassK) -> Result<CaseStudy> {
    alpha.validate()?;
    match label {
        EXAMPLE1_LABEL => Ok(build_example1(alpha)),
        CCC_LABEL => Ok(build_ccc(alpha)),
        other => Err(Error::UnknownPlant(other.to_string())),
    }
}

/// Online control law used in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControllerRepr", into = "ControllerRepr")]
pub enum ControllerVariant {
    /// QP safety filter with synthesized parameters.
    LpQpFilter { params: TuningParams },
    /// `u = k(x) + d(x)ᵀ / ε(h(x))`, not clipped to the input set.
    BaselineFixedForm { params: TuningParams },
    /// The fixed-form law projected onto the input set.
    BaselineSaturated { params: TuningParams },
    /// QP safety filter with hand-picked parameters.
    TrialParams { params: TuningParams },
}

impl ControllerVariant {
    pub fn params(&self) -> &TuningParams {
        match self {
            ControllerVariant::LpQpFilter { params }
            | ControllerVariant::BaselineFixedForm { params }
            | ControllerVariant::BaselineSaturated { params }
            | ControllerVariant::TrialParams { params } => params,
        }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            ControllerVariant::LpQpFilter { .. } => ControllerKind::LpQpFilter,
            ControllerVariant::BaselineFixedForm { .. } => ControllerKind::BaselineFixedForm,
            ControllerVariant::BaselineSaturated { .. } => ControllerKind::BaselineSaturated,
            ControllerVariant::TrialParams { .. } => ControllerKind::TrialParams,
        }
    }

    pub fn from_kind(kind: ControllerKind, params: TuningParams) -> Self {
        match kind {
            ControllerKind::LpQpFilter => ControllerVariant::LpQpFilter { params },
            ControllerKind::BaselineFixedForm => ControllerVariant::BaselineFixedForm { params },
            ControllerKind::BaselineSaturated => ControllerVariant::BaselineSaturated { params },
            ControllerKind::TrialParams => ControllerVariant::TrialParams { params },
        }
    }

    pub fn uses_qp(&self) -> bool {
        matches!(
            self,
            ControllerVariant::LpQpFilter { .. } | ControllerVariant::TrialParams { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    LpQpFilter,
    BaselineFixedForm,
    BaselineSaturated,
    TrialParams,
}

/// JSON form: `kind`, `lambda`, one of `eps0` / `ln_eps0`, optional `lambda_min`
/// (defaults to `lambda`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerRepr {
    kind: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ln_eps0: Option<f64>,
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_min: Option<f64>,
}

impl TryFrom<ControllerRepr> for ControllerVariant {
    type Error = Error;

    fn try_from(r: ControllerRepr) -> Result<Self> {
        let ln_eps0 = match (r.eps0, r.ln_eps0) {
            (Some(e), None) if e > 0.0 => e.ln(),
            (Some(e), None) => return Err(Error::InvalidArgument(format!("eps0 must be positive, got {e}"))),
            (None, Some(l)) => l,
            _ => return Err(Error::InvalidArgument("give exactly one of eps0 and ln_eps0".into())),
        };
        let params = TuningParams::new(ln_eps0, r.lambda, r.lambda_min.unwrap_or(r.lambda))?;
        Ok(ControllerVariant::from_kind(r.kind, params))
    }
}

impl From<ControllerVariant> for ControllerRepr {
    fn from(v: ControllerVariant) -> Self {
        let p = *v.params();
        ControllerRepr {
            kind: v.kind(),
            eps0: None,
            ln_eps0: Some(p.ln_eps0),
            lambda: p.lambda,
            lambda_min: Some(p.lambda_min),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tissf::lie_terms;
    use std::f64::consts::PI;

    #[test]
    fn example1_pieces() {
        let cs = build_example1(ClassK::default());
        assert_eq!(cs.plant.drift(&[0.0, 2.0]), vec![-2.0, 0.0]);
        assert_eq!(cs.nominal.eval(&[0.0, 0.0]), vec![-1.0]);
        assert!((cs.disturbance.at(PI / 2.0)[0] - 3.0).abs() < 1e-15);
        assert_eq!(cs.barrier.gradient(&[0.3, 0.1]), vec![1.0, -1.0]);
        assert!(cs.validate(200, 1).is_ok());
    }

    #[test]
    fn ccc_pieces() {
        assert_eq!(ccc::h_hat(0.0, 0.0), 2.0);
        assert_eq!(ccc::v_desired(7.0), 0.0);
        assert_eq!(ccc::v_desired(40.0), 20.0);
        let cs = build_ccc(ClassK::default());
        let lt = lie_terms(&cs.plant, &cs.barrier, &[30.0, 10.0, 5.0]).unwrap();
        assert!((lt.d[0] + 1.55).abs() < 1e-12);
        assert!(cs.validate(200, 2).is_ok());
    }

    #[test]
    fn lead_profile() {
        assert_eq!(lead_velocity(0.0), (15.0, 0.0));
        assert_eq!(lead_velocity(8.75), (0.0, 0.0));
        assert_eq!(lead_velocity(6.0), (11.0, -4.0));
        assert_eq!(lead_velocity(100.0), (0.0, 0.0));
        assert_eq!(LeadProfile::ccc().stop_time(), 8.75);
    }

    #[test]
    fn nominal_continuous_across_kinks() {
        let kinks = [ccc::D_ST, ccc::D_ST + ccc::V_BAR / ccc::K_V];
        for kink in kinks {
            let mut prev = ccc::nominal(&[kink - 0.01, 10.0, 12.0]);
            for k in 1..=200_000 {
                let d = kink - 0.01 + 1e-7 * k as f64;
                let u = ccc::nominal(&[d, 10.0, 12.0]);
                assert!((u - prev).abs() < 1e-6, "jump at D = {d}");
                prev = u;
            }
        }
    }

    #[test]
    fn registry() {
        assert!(case_study("example1", ClassK::default()).is_ok());
        assert!(case_study("ccc", ClassK::default()).is_ok());
        assert_eq!(
            case_study("segway", ClassK::default()).unwrap_err(),
            Error::UnknownPlant("segway".into())
        );
    }

    #[test]
    fn controller_json() {
        let v: ControllerVariant =
            serde_json::from_str(r#"{"kind":"baseline_fixed_form","eps0":5e-4,"lambda":0.1}"#).unwrap();
        assert_eq!(v.kind(), ControllerKind::BaselineFixedForm);
        assert!((v.params().eps0() - 5e-4).abs() < 1e-18);
        let back: ControllerVariant = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<ControllerVariant>(
            r#"{"kind":"trial_params","eps0":1.0,"ln_eps0":0.0,"lambda":0.1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ControllerVariant>(r#"{"kind":"lp_qp_filter","ln_eps0":0.0,"lambda":-1}"#).is_err());
    }
}
