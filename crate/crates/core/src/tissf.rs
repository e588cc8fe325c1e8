//! Plant and barrier abstractions plus the scalar TISSf formulas.
//!
//! For a control-affine plant `ẋ = f(x) + g(x)(u + ω)` and barrier `h` the
//! TISSf condition at a state is the input half-space
//!
//! ```text
//! d(x)·u ≥ ‖d(x)‖² / ε(h(x)) − c(x),   c = ∇h·f + α(h),   d = ∇h·g
//! ```
//!
//! which intersects a compact input set `U` iff `ε(h) ≥ ‖d‖² / (c + σ_U(d))`
//! whenever `c + σ_U(d) > 0`.

use crate::convex_sets::InputSet;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, fd_gradient, norm2, norm2_sq, norm_inf, row_times_matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;
pub type TimeVectorFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Upper clamp applied to the tuning function value.
pub const EPSILON_CAP: f64 = 1e300;
/// Relative tolerance of the analytic-vs-finite-difference gradient check.
pub const GRADIENT_REL_TOL: f64 = 1e-5;

/// `ẋ = f(x) + e(t) + g(x) u`, where `e` is an optional known exogenous
/// drift (e.g. a scheduled lead-vehicle acceleration) that is not part of
/// the design-time model.
#[derive(Clone)]
pub struct PlantSpec {
    label: String,
    n: usize,
    m: usize,
    f: VectorFn,
    g: MatrixFn,
    exogenous: Option<TimeVectorFn>,
}

impl fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("exogenous", &self.exogenous.is_some())
            .finish()
    }
}

impl PlantSpec {
    pub fn new(label: impl Into<String>, n: usize, m: usize, f: VectorFn, g: MatrixFn) -> Self {
        PlantSpec {
            label: label.into(),
            n,
            m,
            f,
            g,
            exogenous: None,
        }
    }

    pub fn with_exogenous(mut self, e: TimeVectorFn) -> Self {
        self.exogenous = Some(e);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }

    pub fn input_matrix(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (self.g)(x)
    }

    /// Drift including the exogenous term at time `t`.
    pub fn drift_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut f = self.drift(x);
        if let Some(e) = &self.exogenous {
            for (fi, ei) in f.iter_mut().zip(e(t, x)) {
                *fi += ei;
            }
        }
        f
    }

    /// `f(x) + e(t) + g(x) w`
    pub fn vector_field(&self, t: f64, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut xd = self.drift_at(t, x);
        for (xi, row) in xd.iter_mut().zip(self.input_matrix(x)) {
            *xi += row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        xd
    }
}

/// Extended class-K function. Only the linear family is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassK {
    Linear { a: f64 },
}

impl Default for ClassK {
    fn default() -> Self {
        ClassK::Linear { a: 1.0 }
    }
}

impl ClassK {
    pub fn linear(a: f64) -> Result<Self> {
        let k = ClassK::Linear { a };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassK::Linear { a } if a.is_finite() && a > 0.0 => Ok(()),
            ClassK::Linear { a } => Err(Error::InvalidArgument(format!(
                "class-K gain must be positive, got {a}"
            ))),
        }
    }

    pub fn apply(&self, r: f64) -> f64 {
        match *self {
            ClassK::Linear { a } => a * r,
        }
    }

    pub fn inverse(&self, r: f64) -> f64 {
        match *self {
            ClassK::Linear { a } => r / a,
        }
    }
}

#[derive(Clone)]
pub struct BarrierSpec {
    label: String,
    h: ScalarFn,
    grad_h: VectorFn,
    pub alpha: ClassK,
}

impl fmt::Debug for BarrierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BarrierSpec")
            .field("label", &self.label)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl BarrierSpec {
    pub fn new(label: impl Into<String>, h: ScalarFn, grad_h: VectorFn, alpha: ClassK) -> Self {
        BarrierSpec {
            label: label.into(),
            h,
            grad_h,
            alpha,
        }
    }

    pub fn with_alpha(mut self, alpha: ClassK) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.h)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad_h)(x)
    }

    /// Compares the analytic gradient with central differences at `n_points`
    /// uniform points of the box `[lo, hi]`; returns the worst relative error.
    pub fn check_gradient(&self, lo: &[f64], hi: &[f64], n_points: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..n_points {
            let x: Vec<f64> = lo.iter().zip(hi).map(|(&l, &h)| rng.gen_range(l..=h)).collect();
            let analytic = self.gradient(&x);
            let numeric = fd_gradient(|p| self.value(p), &x, 1e-6);
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let rel = norm_inf(&diff) / norm_inf(&analytic).max(1.0);
            worst = worst.max(rel);
        }
        if !(worst <= GRADIENT_REL_TOL) {
            return Err(Error::GradientMismatch {
                label: self.label.clone(),
                rel_error: worst,
            });
        }
        Ok(worst)
    }
}

/// `ε(h) = exp(ln_eps0 + lambda·h)` with `lambda >= lambda_min > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    pub ln_eps0: f64,
    pub lambda: f64,
    pub lambda_min: f64,
}

impl TuningParams {
    pub fn new(ln_eps0: f64, lambda: f64, lambda_min: f64) -> Result<Self> {
        if !(ln_eps0.is_finite() && lambda.is_finite() && lambda_min.is_finite()) {
            return Err(Error::NonFinite("tuning parameters"));
        }
        if !(lambda_min > 0.0) || lambda < lambda_min {
            return Err(Error::InvalidArgument(format!(
                "need lambda >= lambda_min > 0, got lambda={lambda}, lambda_min={lambda_min}"
            )));
        }
        Ok(TuningParams {
            ln_eps0,
            lambda,
            lambda_min,
        })
    }

    /// Parameters given as `(eps0, lambda)`, with `lambda_min = lambda`.
    pub fn from_eps0(eps0: f64, lambda: f64) -> Result<Self> {
        if !(eps0 > 0.0) {
            return Err(Error::InvalidArgument(format!("eps0 must be positive, got {eps0}")));
        }
        Self::new(eps0.ln(), lambda, lambda)
    }

    pub fn eps0(&self) -> f64 {
        self.ln_eps0.exp()
    }

    /// Tuning value and whether it hit the clamp range.
    pub fn epsilon_flagged(&self, h: f64) -> (f64, bool) {
        let e = (self.ln_eps0 + self.lambda * h).exp();
        if e > EPSILON_CAP || e.is_nan() {
            (EPSILON_CAP, true)
        } else if e < f64::MIN_POSITIVE {
            (f64::MIN_POSITIVE, true)
        } else {
            (e, false)
        }
    }

    pub fn epsilon(&self, h: f64) -> f64 {
        let (e, clamped) = self.epsilon_flagged(h);
        if clamped {
            log::debug!("tuning function clamped at h = {h}");
        }
        e
    }
}

/// Bounded perturbation `ω(t)` with `‖ω‖∞ <= delta`.
#[derive(Clone)]
pub struct Disturbance {
    pub delta: f64,
    signal: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for Disturbance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Disturbance").field("delta", &self.delta).finish()
    }
}

impl Disturbance {
    pub fn new(delta: f64, signal: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("disturbance bound must be >= 0, got {delta}")));
        }
        Ok(Disturbance { delta, signal })
    }

    pub fn zero(m: usize) -> Self {
        Disturbance {
            delta: 0.0,
            signal: Arc::new(move |_| vec![0.0; m]),
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        (self.signal)(t)
    }

    /// Checks `‖ω(t)‖∞ <= delta` on `n` evenly spaced times in `[0, t_end]`.
    pub fn respects_bound(&self, t_end: f64, n: usize) -> bool {
        (0..=n).all(|k| {
            let t = t_end * k as f64 / n.max(1) as f64;
            norm_inf(&self.at(t)) <= self.delta + 1e-12
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieTerms {
    pub h: f64,
    /// `∇h·f + α(h)`
    pub c: f64,
    /// `∇h·g`
    pub d: Vec<f64>,
}

fn lie_terms_with(barrier: &BarrierSpec, plant: &PlantSpec, x: &[f64], f: Vec<f64>) -> Result<LieTerms> {
    let h = barrier.value(x);
    let grad = barrier.gradient(x);
    let lf: f64 = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
    let c = lf + barrier.alpha.apply(h);
    let d = row_times_matrix(&grad, &plant.input_matrix(x));
    if !(h.is_finite() && c.is_finite() && all_finite(&d)) {
        return Err(Error::NonFinite("Lie derivatives"));
    }
    Ok(LieTerms { h, c, d })
}

/// `c(x)` and `d(x)` for the design-time drift `f`.
pub fn lie_terms(plant: &PlantSpec, barrier: &BarrierSpec, x: &[f64]) -> Result<LieTerms> {
    if !all_finite(x) {
        return Err(Error::NonFinite("state"));
    }
    lie_terms_with(barrier, plant, x, plant.drift(x))
}

/// `c(x)` and `d(x)` including the plant's exogenous drift at time `t`.
pub fn lie_terms_at(plant: &PlantSpec, barrier: &BarrierSpec, x: &[f64], t: f64) -> Result<LieTerms> {
    if !all_finite(x) {
        return Err(Error::NonFinite("state"));
    }
    lie_terms_with(barrier, plant, x, plant.drift_at(t, x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compatibility {
    /// Smallest tuning value making the half-space meet `U`.
    Bound(f64),
    /// `c + σ(d) <= 0`: no finite tuning value is compatible.
    IncompatibleNominal { s: f64 },
}

pub fn compatibility_bound(c: f64, d: &[f64], set: &InputSet) -> Result<Compatibility> {
    if !c.is_finite() {
        return Err(Error::NonFinite("c"));
    }
    let dd = norm2_sq(d);
    if dd == 0.0 {
        set.support_value(d)?;
        return Ok(if c >= 0.0 {
            Compatibility::Bound(0.0)
        } else {
            Compatibility::IncompatibleNominal { s: c }
        });
    }
    let s = c + set.support_value(d)?;
    Ok(if s > 0.0 {
        Compatibility::Bound(dd / s)
    } else {
        Compatibility::IncompatibleNominal { s }
    })
}

/// Lower bounds on `‖d‖` and `c + σ(d)` below which `η` is not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Floors {
    pub d_min: f64,
    pub s_min: f64,
}

impl Default for Floors {
    fn default() -> Self {
        Floors {
            d_min: 1e-6,
            s_min: 1e-6,
        }
    }
}

impl Floors {
    pub fn validate(&self) -> Result<()> {
        if self.d_min > 0.0 && self.s_min > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("degeneracy floors must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DegenerateReason {
    /// `‖d‖ < d_min`
    SmallInputGain { norm_d: f64 },
    /// `c + σ(d) < s_min`
    SmallSupportMargin { s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaOutcome {
    Value(f64),
    Degenerate(DegenerateReason),
}

impl EtaOutcome {
    pub fn value(&self) -> Option<f64> {
        match *self {
            EtaOutcome::Value(v) => Some(v),
            EtaOutcome::Degenerate(_) => None,
        }
    }
}

/// `η = ln‖d‖² − ln(c + σ(d))`; compatibility at a state holds iff
/// `ln ε(h) >= η`.
pub fn eta(c: f64, d: &[f64], set: &InputSet, floors: Floors) -> Result<EtaOutcome> {
    floors.validate()?;
    if !c.is_finite() {
        return Err(Error::NonFinite("c"));
    }
    let nd = norm2(d);
    if nd < floors.d_min {
        return Ok(EtaOutcome::Degenerate(DegenerateReason::SmallInputGain { norm_d: nd }));
    }
    let s = c + set.support_value(d)?;
    if s < floors.s_min {
        return Ok(EtaOutcome::Degenerate(DegenerateReason::SmallSupportMargin { s }));
    }
    Ok(EtaOutcome::Value(2.0 * nd.ln() - s.ln()))
}

/// `ζ(h, δ) = −α⁻¹(−ε(h) δ² / 4)`
pub fn robustness_margin(params: &TuningParams, alpha: &ClassK, h: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    -alpha.inverse(-params.epsilon(h) * delta * delta / 4.0)
}

/// TISSf half-space `d·u >= rhs` in the form consumed by the QP filter.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub d: Vec<f64>,
    pub rhs: f64,
}

/// `rhs = ‖d‖² / ε − c`
pub fn halfspace_rhs(c: f64, d: &[f64], eps: f64) -> f64 {
    norm2_sq(d) / eps - c
}

pub fn tissf_halfspace(
    plant: &PlantSpec,
    barrier: &BarrierSpec,
    params: &TuningParams,
    x: &[f64],
) -> Result<HalfSpace> {
    let lt = lie_terms(plant, barrier, x)?;
    let rhs = halfspace_rhs(lt.c, &lt.d, params.epsilon(lt.h));
    if !rhs.is_finite() {
        return Err(Error::NonFinite("half-space offset"));
    }
    Ok(HalfSpace { d: lt.d, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator_like() -> (PlantSpec, BarrierSpec) {
        let plant = PlantSpec::new(
            "ex",
            2,
            1,
            Arc::new(|x: &[f64]| vec![-x[1], 0.0]),
            Arc::new(|_: &[f64]| vec![vec![0.0], vec![1.0]]),
        );
        let barrier = BarrierSpec::new(
            "ex",
            Arc::new(|x: &[f64]| x[0] - x[1]),
            Arc::new(|_: &[f64]| vec![1.0, -1.0]),
            ClassK::default(),
        );
        (plant, barrier)
    }

    #[test]
    fn lie_terms_hand_values() {
        let (p, b) = double_integrator_like();
        let lt = lie_terms(&p, &b, &[0.0, 0.0]).unwrap();
        assert_eq!((lt.h, lt.c, lt.d.clone()), (0.0, 0.0, vec![-1.0]));
        let lt = lie_terms(&p, &b, &[1.0, 0.0]).unwrap();
        assert_eq!((lt.c, lt.d), (1.0, vec![-1.0]));
        assert!(lie_terms(&p, &b, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn epsilon_values() {
        let p = TuningParams::new(0.0, 1.0, 0.01).unwrap();
        assert_eq!(p.epsilon(0.0), 1.0);
        let p = TuningParams::new(-4.0, 0.2, 0.01).unwrap();
        assert!((p.epsilon(5.0) - (-3.0_f64).exp()).abs() < 1e-15);
        assert!((p.epsilon(5.0) - 0.049787).abs() < 1e-6);
        let p = TuningParams::from_eps0(5.6e-3, 0.18).unwrap();
        assert!((p.epsilon(0.0) - 5.6e-3).abs() < 1e-15);
        let (_, clamped) = TuningParams::new(0.0, 1.0, 0.5).unwrap().epsilon_flagged(1e6);
        assert!(clamped);
    }

    #[test]
    fn params_enforce_lambda_min() {
        assert!(TuningParams::new(0.0, 0.001, 0.01).is_err());
        assert!(TuningParams::new(0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn compatibility_examples() {
        let u = InputSet::boxed(vec![-15.0], vec![15.0]).unwrap();
        match compatibility_bound(0.0, &[-1.0], &u).unwrap() {
            Compatibility::Bound(b) => assert!((b - 1.0 / 15.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(compatibility_bound(5.0, &[0.0], &u).unwrap(), Compatibility::Bound(0.0));
        assert!(matches!(
            compatibility_bound(-20.0, &[-1.0], &u).unwrap(),
            Compatibility::IncompatibleNominal { .. }
        ));
    }

    #[test]
    fn eta_examples() {
        let u15 = InputSet::boxed(vec![-15.0], vec![15.0]).unwrap();
        let f = Floors::default();
        let e = eta(0.0, &[-1.0], &u15, f).unwrap().value().unwrap();
        assert!((e - (-(15.0_f64).ln())).abs() < 1e-12);
        assert!((e + 2.70805).abs() < 1e-5);
        assert!(matches!(
            eta(0.0, &[1e-12], &u15, f).unwrap(),
            EtaOutcome::Degenerate(DegenerateReason::SmallInputGain { .. })
        ));
        let e2 = eta(0.0, &[-2.0], &u15, f).unwrap().value().unwrap();
        assert!((e2 - (4.0_f64.ln() - 30.0_f64.ln())).abs() < 1e-12);
        assert!((e2 + 2.0149).abs() < 1e-4);
        assert!((e2 - e - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn margin_examples() {
        let a = ClassK::default();
        let p = TuningParams::new(0.3, 0.5, 0.1).unwrap();
        assert_eq!(robustness_margin(&p, &a, 2.0, 0.0), 0.0);
        let p = TuningParams::new(0.04_f64.ln(), 0.1, 0.1).unwrap();
        assert!((robustness_margin(&p, &a, 0.0, 1.2) - 0.0144).abs() < 1e-12);
        let p = TuningParams::from_eps0(5.6e-3, 0.18).unwrap();
        assert!((robustness_margin(&p, &a, 0.0, 1.2) - 2.016e-3).abs() < 1e-15);
        let a2 = ClassK::linear(2.0).unwrap();
        assert!((robustness_margin(&p, &a2, 0.0, 1.2) - 1.008e-3).abs() < 1e-15);
    }

    #[test]
    fn halfspace_examples() {
        let (p, b) = double_integrator_like();
        let params = TuningParams::new((1.0_f64 / 15.0).ln(), 0.01, 0.01).unwrap();
        let hs = tissf_halfspace(&p, &b, &params, &[0.0, 0.0]).unwrap();
        assert!((hs.rhs - 15.0).abs() < 1e-12);
        // touches U = [-15, 15] exactly at u = -15
        assert!((hs.d[0] * -15.0 - hs.rhs).abs() < 1e-12);
        assert_eq!(halfspace_rhs(3.0, &[0.0], 0.7), -3.0);
        assert!((halfspace_rhs(1.0, &[-1.0], 1e9) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_check_catches_bugs() {
        let (_, b) = double_integrator_like();
        assert!(b.check_gradient(&[-5.0, -5.0], &[5.0, 5.0], 100, 1).is_ok());
        let bad = BarrierSpec::new(
            "bad",
            Arc::new(|x: &[f64]| x[0] * x[0]),
            Arc::new(|x: &[f64]| vec![x[0]]),
            ClassK::default(),
        );
        assert!(matches!(
            bad.check_gradient(&[-1.0], &[1.0], 100, 1),
            Err(Error::GradientMismatch { .. })
        ));
    }

    #[test]
    fn disturbance_bound() {
        let w = Disturbance::new(3.0, Arc::new(|t: f64| vec![3.0 * t.sin()])).unwrap();
        assert!(w.respects_bound(20.0, 10_000));
        assert!((w.at(std::f64::consts::FRAC_PI_2)[0] - 3.0).abs() < 1e-15);
        assert!(Disturbance::new(-1.0, Arc::new(|_| vec![0.0])).is_err());
    }
}
