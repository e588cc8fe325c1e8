use proptest::prelude::*;
use tissf_core::linalg::{dist2, dot};
use tissf_core::lp_solver::{solve_2d, solve_simplex, Constraint2, LpProblem, LpStatus};
use tissf_core::qp_filter::{solve_safety_qp, QpInstance, QpStatus, DEFAULT_QP_TOL};
use tissf_core::tissf::{compatibility_bound, eta, halfspace_rhs, Compatibility, EtaOutcome, Floors, TuningParams};
use tissf_core::InputSet;

fn vec_of(m: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, m)
}

fn any_set() -> impl Strategy<Value = InputSet> {
    let boxes = (1usize..=3).prop_flat_map(|m| (vec_of(m, -3.0, -0.2), vec_of(m, 0.2, 3.0)))
        .prop_map(|(lo, hi)| InputSet::boxed(lo, hi).unwrap());
    let balls = (0.1f64..5.0, 1usize..=3).prop_map(|(g, m)| InputSet::ball(g, m).unwrap());
    let polys = (2usize..=3).prop_flat_map(|m| {
        (prop::collection::vec(vec_of(m, -1.0, 1.0), 0..4), vec_of(2 * m + 4, 0.3, 2.0))
    })
    .prop_map(|(extra, b)| {
        let m = b.len() / 2 - 2;
        let mut a = Vec::new();
        for i in 0..m {
            for s in [1.0, -1.0] {
                let mut r = vec![0.0; m];
                r[i] = s;
                a.push(r);
            }
        }
        let extra: Vec<Vec<f64>> = extra.into_iter().filter(|r| r.iter().any(|v| v.abs() > 1e-3)).collect();
        a.extend(extra);
        let b = b[..a.len()].to_vec();
        InputSet::polyhedron(a, b).unwrap()
    });
    prop_oneof![boxes, balls, polys]
}

fn set_and_dir() -> impl Strategy<Value = (InputSet, Vec<f64>, Vec<f64>)> {
    any_set().prop_flat_map(|s| {
        let m = s.dim();
        (Just(s), vec_of(m, -5.0, 5.0), vec_of(m, -5.0, 5.0))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn support_is_positively_homogeneous((set, d, _) in set_and_dir(), t in 0.0f64..10.0) {
        let scaled: Vec<f64> = d.iter().map(|v| t * v).collect();
        let a = set.support_value(&scaled).unwrap();
        let b = t * set.support_value(&d).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
    }

    #[test]
    fn support_is_subadditive((set, a, b) in set_and_dir()) {
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = set.support_value(&sum).unwrap();
        let rhs = set.support_value(&a).unwrap() + set.support_value(&b).unwrap();
        prop_assert!(lhs <= rhs + 1e-8 * (1.0 + rhs.abs()));
    }

    #[test]
    fn support_point_attains_value((set, d, _) in set_and_dir()) {
        let (sigma, u) = set.support(&d).unwrap();
        prop_assert!(set.contains(&u, 1e-7));
        prop_assert!((dot(&d, &u) - sigma).abs() <= 1e-8 * (1.0 + sigma.abs()));
    }

    #[test]
    fn projection_is_nearest_point((set, q, probe) in set_and_dir()) {
        let p = set.project(&q, 1e-10).unwrap();
        prop_assert!(set.contains(&p, 1e-6));
        // variational inequality against a point of the set
        let u = set.support_point(&probe).unwrap();
        let lhs: f64 = q.iter().zip(&p).zip(&u).map(|((qi, pi), ui)| (qi - pi) * (ui - pi)).sum();
        prop_assert!(lhs <= 1e-5 * (1.0 + dist2(&q, &p)));
        let again = set.project(&p, 1e-10).unwrap();
        prop_assert!(dist2(&again, &p) <= 1e-6);
    }

    #[test]
    fn compatibility_bound_is_tight((set, d, _) in set_and_dir(), c in -10.0f64..10.0) {
        if let Compatibility::Bound(bound) = compatibility_bound(c, &d, &set).unwrap() {
            prop_assume!(bound > 0.0);
            let (sigma, u) = set.support(&d).unwrap();
            prop_assert!(dot(&d, &u) - halfspace_rhs(c, &d, bound * 1.000001) >= -1e-7);
            prop_assert!(sigma < halfspace_rhs(c, &d, bound * 0.999));
            match eta(c, &d, &set, Floors::default()).unwrap() {
                EtaOutcome::Value(e) => prop_assert!((e - bound.ln()).abs() <= 1e-9 * (1.0 + e.abs())),
                EtaOutcome::Degenerate(_) => {}
            }
        }
    }

    #[test]
    fn qp_is_feasible_and_beats_support_point(
        (set, d, q) in set_and_dir().prop_filter("box or ball", |(s, _, _)| !matches!(s, InputSet::Polyhedron(_))),
        frac in 0.0f64..1.0,
    ) {
        let top = set.support_value(&d).unwrap();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let bottom = -set.support_value(&neg).unwrap();
        let rhs = bottom + frac * (top - bottom);
        let inst = QpInstance::new(q.clone(), d.clone(), rhs, set.clone()).unwrap();
        let r = solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap();
        prop_assert_eq!(r.status, QpStatus::Optimal);
        prop_assert!(r.tissf_slack >= -1e-6);
        prop_assert!(set.contains(&r.u_star, 1e-6));
        let u_sup = set.support_point(&d).unwrap();
        prop_assert!(r.objective(&q) <= 0.5 * dist2(&u_sup, &q).powi(2) + 1e-6);
    }

    #[test]
    fn qp_gap_is_monotone(
        (set, d, q) in set_and_dir(),
        rhs in -5.0f64..5.0,
        mut mus in prop::collection::vec(0.0f64..50.0, 2..6),
    ) {
        let inst = QpInstance::new(q, d, rhs, set).unwrap();
        mus.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = mus.iter().map(|&m| inst.gap(m).unwrap()).collect();
        for w in gaps.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6);
        }
    }

    #[test]
    fn qp_infeasible_when_rhs_exceeds_support((set, d, q) in set_and_dir(), excess in 0.01f64..5.0) {
        prop_assume!(d.iter().any(|v| v.abs() > 1e-3));
        let rhs = set.support_value(&d).unwrap() + excess;
        let inst = QpInstance::new(q, d, rhs, set).unwrap();
        prop_assert_eq!(solve_safety_qp(&inst, DEFAULT_QP_TOL).unwrap().status, QpStatus::InfeasibleCertificate);
    }

    #[test]
    fn lp2d_agrees_with_simplex(
        rows in prop::collection::vec((0.0f64..std::f64::consts::TAU, 0.1f64..3.0), 0..8),
        rot in 0.0f64..std::f64::consts::TAU,
        y0 in vec_of(2, -5.0, 5.0),
        obj in vec_of(2, -3.0, 3.0),
    ) {
        let mut angles: Vec<(f64, f64)> = (0..3).map(|i| (rot + i as f64 * std::f64::consts::TAU / 3.0, 1.0)).collect();
        angles.extend(rows);
        let cons: Vec<Constraint2> = angles
            .iter()
            .map(|&(th, r)| Constraint2::new(th.cos(), th.sin(), th.cos() * y0[0] + th.sin() * y0[1] - r))
            .collect();
        let exact = solve_2d(&cons, [obj[0], obj[1]]).unwrap();
        let lp = LpProblem::new(
            obj.clone(),
            cons.iter().map(|c| vec![-c.a1, -c.a2]).collect(),
            cons.iter().map(|c| -c.rhs).collect(),
        ).unwrap();
        let simplex = solve_simplex(&lp).unwrap();
        prop_assert_eq!(exact.status, LpStatus::Optimal);
        prop_assert_eq!(simplex.status, LpStatus::Optimal);
        prop_assert!((exact.objective - simplex.objective).abs() <= 1e-7 * (1.0 + exact.objective.abs()));
        for c in &cons {
            prop_assert!(c.slack([exact.x[0], exact.x[1]]) >= -1e-9);
        }
    }

    #[test]
    fn tuning_function_is_increasing(ln_eps0 in -20.0f64..20.0, lambda in 1e-3f64..2.0, h in -20.0f64..20.0, dh in 1e-3f64..1.0) {
        let p = TuningParams::new(ln_eps0, lambda, 1e-3).unwrap();
        prop_assert!(p.epsilon(h + dh) > p.epsilon(h));
    }
}
