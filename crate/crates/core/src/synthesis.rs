//! Offline tuning synthesis.
//!
//! Pipeline: cover the safe part of a domain box with samples, evaluate `h`
//! and `η` at each sample, robustify each pointwise condition
//! `ln ε₀ + λ h(x) >= η(x)` by the covering radius and Lipschitz constants,
//! solve
//!
//! ```text
//! min ln ε₀ + ρ λ   s.t.   ln ε₀ + λ (h_i − L_h κ) >= η_i + L_η κ,   λ >= λ_min
//! ```
//!
//! and re-check the result on an independent, denser sample.

use crate::convex_sets::InputSet;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist2, fd_gradient, norm2};
use crate::lp_solver::{solve_2d, Constraint2, LpStatus};
use crate::tissf::{eta, lie_terms, BarrierSpec, DegenerateReason, EtaOutcome, Floors, PlantSpec, TuningParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of random probes used to estimate the realized covering radius.
pub const KAPPA_PROBES: usize = 1000;
/// Verification samples per synthesis sample.
pub const VERIFY_FACTOR: usize = 10;
/// Excluded-sample fraction above which the result carries a warning.
pub const EXCLUSION_WARN_FRACTION: f64 = 0.2;

const PROBE_STREAM: u64 = 0xc0ff_ee00_d15e_a5e5;
const VERIFY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = DomainBox { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::InvalidArgument("domain bounds must have equal, nonzero length".into()));
        }
        if !all_finite(&self.lo) || !all_finite(&self.hi) {
            return Err(Error::NonFinite("domain bounds"));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("domain needs lo < hi in every component".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingMethod {
    /// Tensor grid with `counts[i]` points along axis `i`; the covering radius
    /// is half the cell diagonal.
    Grid { counts: Vec<usize> },
    /// `n` Latin-hypercube points with a caller-asserted covering radius.
    LatinHypercube { n: usize, kappa: f64 },
}

impl SamplingMethod {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SamplingMethod::Grid { counts } => {
                if counts.len() != dim || counts.iter().any(|&c| c < 2) {
                    return Err(Error::InvalidArgument(format!(
                        "grid needs {dim} per-axis counts, each >= 2"
                    )));
                }
            }
            SamplingMethod::LatinHypercube { n, kappa } => {
                if *n == 0 || !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(Error::InvalidArgument("LHS needs n > 0 and kappa > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Same method with roughly `factor` times as many points.
    pub fn densified(&self, factor: usize) -> SamplingMethod {
        match self {
            SamplingMethod::Grid { counts } => {
                let per_axis = (factor as f64).powf(1.0 / counts.len() as f64);
                SamplingMethod::Grid {
                    counts: counts
                        .iter()
                        .map(|&c| ((c - 1) as f64 * per_axis).ceil() as usize + 1)
                        .collect(),
                }
            }
            SamplingMethod::LatinHypercube { n, kappa } => SamplingMethod::LatinHypercube {
                n: n * factor,
                kappa: *kappa,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub index: usize,
    pub state: Vec<f64>,
    pub reason: DegenerateReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// Sample states, all with `h >= 0`.
    pub points: Vec<Vec<f64>>,
    pub method: SamplingMethod,
    pub kappa_nominal: f64,
    /// Largest nearest-sample distance over random probes in the safe set;
    /// `None` when no probe landed in the safe set.
    pub kappa_effective: Option<f64>,
    /// Filled by [`synthesize`] with samples excluded by the `η` floors.
    pub rejected: Vec<Exclusion>,
}

/// Tensor-grid points, last axis varying fastest.
pub fn grid_points(domain: &DomainBox, counts: &[usize]) -> Vec<Vec<f64>> {
    let total: usize = counts.iter().product();
    let n = counts.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        out.push(
            (0..n)
                .map(|i| {
                    let t = idx[i] as f64 / (counts[i] - 1) as f64;
                    domain.lo[i] + (domain.hi[i] - domain.lo[i]) * t
                })
                .collect(),
        );
        for i in (0..n).rev() {
            idx[i] += 1;
            if idx[i] < counts[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    out
}

/// Stratified sample: each axis is split into `n` equal strata, each stratum
/// used exactly once, with a uniform offset inside the stratum.
pub fn latin_hypercube(domain: &DomainBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = domain.dim();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let width = domain.hi[j] - domain.lo[j];
        cols.push(
            perm.into_iter()
                .map(|s| domain.lo[j] + width * (s as f64 + rng.gen::<f64>()) / n as f64)
                .collect(),
        );
    }
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn raw_points(domain: &DomainBox, method: &SamplingMethod, seed: u64) -> (Vec<Vec<f64>>, f64) {
    match method {
        SamplingMethod::Grid { counts } => {
            let diag_sq: f64 = (0..domain.dim())
                .map(|i| ((domain.hi[i] - domain.lo[i]) / (counts[i] - 1) as f64).powi(2))
                .sum();
            (grid_points(domain, counts), 0.5 * diag_sq.sqrt())
        }
        SamplingMethod::LatinHypercube { n, kappa } => (latin_hypercube(domain, *n, seed), *kappa),
    }
}

fn estimate_kappa(domain: &DomainBox, barrier: &BarrierSpec, points: &[Vec<f64>], seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PROBE_STREAM);
    let mut worst: Option<f64> = None;
    let mut found = 0;
    for _ in 0..KAPPA_PROBES * 200 {
        if found == KAPPA_PROBES {
            break;
        }
        let x: Vec<f64> = domain
            .lo
            .iter()
            .zip(&domain.hi)
            .map(|(&l, &h)| rng.gen_range(l..h))
            .collect();
        if !(barrier.value(&x) >= 0.0) {
            continue;
        }
        found += 1;
        let nearest = points.iter().map(|p| dist2(p, &x)).fold(f64::INFINITY, f64::min);
        worst = Some(worst.map_or(nearest, |w: f64| w.max(nearest)));
    }
    worst
}

fn sample_safe(domain: &DomainBox, barrier: &BarrierSpec, method: &SamplingMethod, seed: u64) -> Result<(Vec<Vec<f64>>, f64)> {
    domain.validate()?;
    method.validate(domain.dim())?;
    let (raw, kappa) = raw_points(domain, method, seed);
    let points: Vec<Vec<f64>> = raw.into_iter().filter(|x| barrier.value(x) >= 0.0).collect();
    if points.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    Ok((points, kappa))
}

/// Samples the safe part `{h >= 0}` of `domain` and estimates the realized
/// covering radius.
pub fn sample_covering(
    domain: &DomainBox,
    barrier: &BarrierSpec,
    method: &SamplingMethod,
    seed: u64,
) -> Result<SampleSet> {
    let (points, kappa_nominal) = sample_safe(domain, barrier, method, seed)?;
    let kappa_effective = estimate_kappa(domain, barrier, &points, seed);
    Ok(SampleSet {
        points,
        method: method.clone(),
        kappa_nominal,
        kappa_effective,
        rejected: Vec::new(),
    })
}

/// `(h(x), η(x))` at one state.
pub fn eta_at(
    plant: &PlantSpec,
    barrier: &BarrierSpec,
    set: &InputSet,
    x: &[f64],
    floors: Floors,
) -> Result<(f64, EtaOutcome)> {
    let lt = lie_terms(plant, barrier, x)?;
    Ok((lt.h, eta(lt.c, &lt.d, set, floors)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMethod {
    GradientMax,
    Prescribed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    #[serde(rename = "L_h")]
    pub l_h: f64,
    #[serde(rename = "L_eta")]
    pub l_eta: f64,
    pub method: LipschitzMethod,
}

impl LipschitzEstimates {
    pub fn prescribed(l_h: f64, l_eta: f64) -> Result<Self> {
        if !(l_h >= 0.0 && l_eta >= 0.0 && l_h.is_finite() && l_eta.is_finite()) {
            return Err(Error::InvalidArgument("Lipschitz constants must be finite and >= 0".into()));
        }
        Ok(LipschitzEstimates {
            l_h,
            l_eta,
            method: LipschitzMethod::Prescribed,
        })
    }
}

/// Largest central-difference gradient norms of `h` and `η` over the samples.
/// Samples whose difference stencil touches a degenerate `η` are skipped.
pub fn estimate_lipschitz(
    plant: &PlantSpec,
    barrier: &BarrierSpec,
    set: &InputSet,
    samples: &[Vec<f64>],
    floors: Floors,
    fd_step: f64,
) -> Result<LipschitzEstimates> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut l_h = 0.0_f64;
    let mut l_eta = 0.0_f64;
    let mut used = 0usize;
    for x in samples {
        let mut degenerate = false;
        let grad_eta = fd_gradient(
            |p| match eta_at(plant, barrier, set, p, floors) {
                Ok((_, EtaOutcome::Value(v))) => v,
                _ => {
                    degenerate = true;
                    0.0
                }
            },
            x,
            fd_step,
        );
        if degenerate {
            continue;
        }
        let grad_h = fd_gradient(|p| barrier.value(p), x, fd_step);
        l_h = l_h.max(norm2(&grad_h));
        l_eta = l_eta.max(norm2(&grad_eta));
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllDegenerate);
    }
    Ok(LipschitzEstimates {
        l_h,
        l_eta,
        method: LipschitzMethod::GradientMax,
    })
}

/// One robust constraint per sample plus `λ >= λ_min`, in `(ln ε₀, λ)`.
pub fn assemble_constraints(
    h_values: &[f64],
    eta_values: &[f64],
    estimates: &LipschitzEstimates,
    kappa: f64,
    lambda_min: f64,
) -> Vec<Constraint2> {
    debug_assert_eq!(h_values.len(), eta_values.len());
    let mut out: Vec<Constraint2> = h_values
        .iter()
        .zip(eta_values)
        .map(|(&h, &e)| Constraint2::new(1.0, h - estimates.l_h * kappa, e + estimates.l_eta * kappa))
        .collect();
    out.push(Constraint2::new(0.0, 1.0, lambda_min));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub state: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Minimum of `ln ε₀ + λ h(x) − η(x)` over non-degenerate samples.
    pub min_margin: f64,
    pub worst_state: Vec<f64>,
    pub violations: Vec<Violation>,
    pub n_checked: usize,
    pub n_degenerate: usize,
}

/// Evaluates the pointwise compatibility margin at every sample.
pub fn verify_compatibility(
    params: &TuningParams,
    plant: &PlantSpec,
    barrier: &BarrierSpec,
    set: &InputSet,
    samples: &[Vec<f64>],
    floors: Floors,
) -> Result<VerificationReport> {
    let mut report = VerificationReport {
        min_margin: f64::INFINITY,
        worst_state: Vec::new(),
        violations: Vec::new(),
        n_checked: 0,
        n_degenerate: 0,
    };
    for (i, x) in samples.iter().enumerate() {
        let (h, outcome) = eta_at(plant, barrier, set, x, floors)?;
        let Some(e) = outcome.value() else {
            report.n_degenerate += 1;
            continue;
        };
        report.n_checked += 1;
        let margin = params.ln_eps0 + params.lambda * h - e;
        if margin < report.min_margin {
            report.min_margin = margin;
            report.worst_state = x.clone();
        }
        if margin < 0.0 {
            report.violations.push(Violation {
                index: i,
                state: x.clone(),
                margin,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub method: SamplingMethod,
    pub rho: f64,
    pub lambda_min: f64,
    #[serde(default)]
    pub floors: Floors,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub seed: u64,
    /// Prescribed Lipschitz constants; estimated from samples when absent.
    #[serde(default)]
    pub lipschitz: Option<LipschitzEstimates>,
}

fn default_fd_step() -> f64 {
    1e-6
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(self.lambda_min.is_finite() && self.lambda_min > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_min must be > 0, got {}", self.lambda_min)));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidArgument("fd_step must be > 0".into()));
        }
        self.floors.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningLpResult {
    pub params: TuningParams,
    pub eps0: f64,
    pub status: LpStatus,
    pub objective: f64,
    pub n_samples: usize,
    pub n_constraints: usize,
    /// Indices into the synthesis sample set of the constraints active at the optimum.
    pub active_samples: Vec<usize>,
    pub kappa_nominal: f64,
    pub kappa_effective: Option<f64>,
    pub lipschitz: LipschitzEstimates,
    pub min_margin: f64,
    pub worst_state: Vec<f64>,
    pub n_verification_samples: usize,
    pub n_verification_violations: usize,
    pub exclusions: Vec<Exclusion>,
    pub excluded_fraction: f64,
    pub warnings: Vec<String>,
}

/// Full offline pipeline; see the module docs.
pub fn synthesize(
    domain: &DomainBox,
    plant: &PlantSpec,
    barrier: &BarrierSpec,
    set: &InputSet,
    config: &SynthesisConfig,
) -> Result<TuningLpResult> {
    config.validate()?;
    if domain.dim() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "domain vs plant state",
            expected: plant.state_dim(),
            got: domain.dim(),
        });
    }
    let mut samples = sample_covering(domain, barrier, &config.method, config.seed)?;

    let mut kept = Vec::with_capacity(samples.points.len());
    let mut h_values = Vec::with_capacity(samples.points.len());
    let mut eta_values = Vec::with_capacity(samples.points.len());
    for (i, x) in samples.points.iter().enumerate() {
        let (h, outcome) = eta_at(plant, barrier, set, x, config.floors)?;
        match outcome {
            EtaOutcome::Value(e) => {
                kept.push(i);
                h_values.push(h);
                eta_values.push(e);
            }
            EtaOutcome::Degenerate(reason) => samples.rejected.push(Exclusion {
                index: i,
                state: x.clone(),
                reason,
            }),
        }
    }
    if kept.is_empty() {
        return Err(Error::AllDegenerate);
    }
    let excluded_fraction = samples.rejected.len() as f64 / samples.points.len() as f64;
    let mut warnings = Vec::new();
    if excluded_fraction > EXCLUSION_WARN_FRACTION {
        warnings.push(format!(
            "{:.1}% of samples excluded by the degeneracy floors",
            100.0 * excluded_fraction
        ));
    }
    if let (SamplingMethod::LatinHypercube { .. }, Some(eff)) = (&samples.method, samples.kappa_effective) {
        if eff > samples.kappa_nominal {
            warnings.push(format!(
                "estimated covering radius {eff:.4} exceeds asserted kappa {:.4}",
                samples.kappa_nominal
            ));
        }
    }

    let estimates = match config.lipschitz {
        Some(l) => l,
        None => {
            let pts: Vec<Vec<f64>> = kept.iter().map(|&i| samples.points[i].clone()).collect();
            estimate_lipschitz(plant, barrier, set, &pts, config.floors, config.fd_step)?
        }
    };
    let constraints = assemble_constraints(
        &h_values,
        &eta_values,
        &estimates,
        samples.kappa_nominal,
        config.lambda_min,
    );
    let sol = solve_2d(&constraints, [1.0, config.rho])?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::TuningInfeasible),
        LpStatus::Unbounded => return Err(Error::TuningUnbounded),
    }
    let params = TuningParams::new(sol.x[0], sol.x[1].max(config.lambda_min), config.lambda_min)?;
    let active_samples = sol
        .active_rows
        .iter()
        .filter(|&&r| r < kept.len())
        .map(|&r| kept[r])
        .collect();

    let verify_method = samples.method.densified(VERIFY_FACTOR);
    let (verify_points, _) = sample_safe(domain, barrier, &verify_method, config.seed ^ VERIFY_STREAM)?;
    let report = verify_compatibility(&params, plant, barrier, set, &verify_points, config.floors)?;
    if !report.violations.is_empty() {
        warnings.push(format!(
            "{} of {} verification samples violate compatibility",
            report.violations.len(),
            report.n_checked
        ));
    }

    Ok(TuningLpResult {
        eps0: params.eps0(),
        params,
        status: sol.status,
        objective: sol.objective,
        n_samples: samples.points.len(),
        n_constraints: constraints.len(),
        active_samples,
        kappa_nominal: samples.kappa_nominal,
        kappa_effective: samples.kappa_effective,
        lipschitz: estimates,
        min_margin: report.min_margin,
        worst_state: report.worst_state,
        n_verification_samples: verify_points.len(),
        n_verification_violations: report.violations.len(),
        exclusions: samples.rejected,
        excluded_fraction,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tissf::ClassK;
    use std::sync::Arc;

    fn const_barrier(n: usize) -> BarrierSpec {
        BarrierSpec::new(
            "one",
            Arc::new(|_: &[f64]| 1.0),
            Arc::new(move |_: &[f64]| vec![0.0; n]),
            ClassK::default(),
        )
    }

    fn unit_square() -> DomainBox {
        DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn grid_covering_radius() {
        let s = sample_covering(
            &unit_square(),
            &const_barrier(2),
            &SamplingMethod::Grid { counts: vec![3, 3] },
            0,
        )
        .unwrap();
        assert_eq!(s.points.len(), 9);
        assert!((s.kappa_nominal - 2.0_f64.sqrt() / 4.0).abs() < 1e-15);
        let eff = s.kappa_effective.unwrap();
        assert!(eff <= s.kappa_nominal + 1e-12 && eff > 0.2);
    }

    #[test]
    fn lhs_is_stratified_and_seeded() {
        let d = unit_square();
        let a = latin_hypercube(&d, 50, 3);
        assert_eq!(a, latin_hypercube(&d, 50, 3));
        assert_ne!(a, latin_hypercube(&d, 50, 4));
        for j in 0..2 {
            let mut strata: Vec<usize> = a.iter().map(|p| (p[j] * 50.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty_safe_set() {
        let unsafe_everywhere = BarrierSpec::new(
            "neg",
            Arc::new(|_: &[f64]| -1.0),
            Arc::new(|_: &[f64]| vec![0.0, 0.0]),
            ClassK::default(),
        );
        let r = sample_covering(&unit_square(), &unsafe_everywhere, &SamplingMethod::Grid { counts: vec![4, 4] }, 0);
        assert_eq!(r.unwrap_err(), Error::EmptySampleSet);
    }

    #[test]
    fn constraint_arithmetic() {
        let zero = LipschitzEstimates::prescribed(0.0, 0.0).unwrap();
        let c = assemble_constraints(&[5.0], &[-2.7], &zero, 0.37, 0.01);
        assert_eq!(c[0], Constraint2::new(1.0, 5.0, -2.7));
        assert_eq!(c[1], Constraint2::new(0.0, 1.0, 0.01));
        let l = LipschitzEstimates::prescribed(0.2, 0.3).unwrap();
        let c = assemble_constraints(&[5.0], &[-2.7], &l, 0.1, 0.01);
        assert!((c[0].a2 - 4.98).abs() < 1e-12 && (c[0].rhs + 2.67).abs() < 1e-12);
        assert_eq!(assemble_constraints(&[], &[], &l, 0.1, 0.01).len(), 1);
    }

    #[test]
    fn densified_counts() {
        let g = SamplingMethod::Grid { counts: vec![41, 41] }.densified(10);
        assert_eq!(g, SamplingMethod::Grid { counts: vec![128, 128] });
        let l = SamplingMethod::LatinHypercube { n: 20, kappa: 0.1 }.densified(10);
        assert_eq!(l, SamplingMethod::LatinHypercube { n: 200, kappa: 0.1 });
    }

    #[test]
    fn config_validation() {
        let mut c = SynthesisConfig {
            method: SamplingMethod::Grid { counts: vec![3, 3] },
            rho: -1.0,
            lambda_min: 0.01,
            floors: Floors::default(),
            fd_step: 1e-6,
            seed: 0,
            lipschitz: None,
        };
        assert!(c.validate().is_err());
        c.rho = 0.0;
        c.lambda_min = 0.0;
        assert!(c.validate().is_err());
    }
}
