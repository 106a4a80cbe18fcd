use core::f64::consts::PI;

use hybridpd_core::diff::{gradient, normal_trace, partial};
use hybridpd_core::forward::{power_density, synthesize_dataset, ConductivitySolver, SolverOptions};
use hybridpd_core::linearized::{assemble, BaseState, SystemKind};
use hybridpd_core::symbol::{
    check_ellipticity_point, check_ucp_point, classify_roots, delta_prime, q_eval, EllipticityOptions, FormFamily,
    RootKind, UcpOptions,
};
use hybridpd_core::{BoundaryData, Grid, ScalarField, TraceKind};
use proptest::prelude::*;

fn unit2(t: f64) -> Vec<f64> {
    vec![t.cos(), t.sin()]
}

fn unit3(theta: f64, phi: f64) -> Vec<f64> {
    vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

fn orthonormal_to(n: &[f64], t: f64) -> Vec<f64> {
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot: f64 = a.iter().zip(n).map(|(x, y)| x * y).sum();
    let mut e1: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - dot * y).collect();
    let l = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    e1.iter_mut().for_each(|x| *x /= l);
    let e2 = [
        n[1] * e1[2] - n[2] * e1[1],
        n[2] * e1[0] - n[0] * e1[2],
        n[0] * e1[1] - n[1] * e1[0],
    ];
    (0..3).map(|i| t.cos() * e1[i] + t.sin() * e2[i]).collect()
}

fn smooth(g: &Grid, a: f64, b: f64) -> ScalarField {
    ScalarField::from_fn(*g, |p| (a * p[0] + 0.3).sin() * (b * p[1]).cos() + p[0] * p[1]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_index_round_trip(nx in 5usize..12, ny in 5usize..12, nz in 5usize..8, seed in 0usize..10_000) {
        let g = Grid::unit(&[nx, ny, nz]).unwrap();
        let i = seed % g.len();
        prop_assert_eq!(g.index(g.multi_index(i)), i);
    }

    #[test]
    fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0.5f64..4.0) {
        let g = Grid::unit_square(9).unwrap();
        let u = smooth(&g, k, 1.0);
        let v = smooth(&g, 1.0, k);
        let w = u.lin_comb(a, &v, b).unwrap();
        let (gu, gv, gw) = (gradient(&u), gradient(&v), gradient(&w));
        for i in 0..gw.values().len() {
            let e = a * gu.values()[i] + b * gv.values()[i];
            prop_assert!((gw.values()[i] - e).abs() <= 1e-12 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn q_is_homogeneous_and_even(t in 0.0f64..6.3, s in 0.0f64..6.3, lambda in -5.0f64..5.0) {
        let f = unit2(t);
        let xi = unit2(s);
        let q1 = q_eval(&f, &xi).unwrap();
        let scaled: Vec<f64> = xi.iter().map(|x| lambda * x).collect();
        let neg: Vec<f64> = xi.iter().map(|x| -x).collect();
        prop_assert!((q_eval(&f, &scaled).unwrap() - lambda * lambda * q1).abs() <= 1e-12 * (1.0 + lambda * lambda));
        prop_assert!((q_eval(&f, &neg).unwrap() - q1).abs() <= 1e-14);
    }

    #[test]
    fn ellipticity_is_rotation_invariant(t1 in 0.0f64..PI, t2 in 0.0f64..PI, rot in 0.0f64..6.3) {
        let opts = EllipticityOptions::default();
        let a = check_ellipticity_point(&FormFamily::new(&[unit2(t1), unit2(t2)]).unwrap(), &opts);
        let b = check_ellipticity_point(&FormFamily::new(&[unit2(t1 + rot), unit2(t2 + rot)]).unwrap(), &opts);
        // The margin is a continuous function of the directions; verdicts may
        // differ only where the margin is at the tolerance.
        prop_assert!((a.margin - b.margin).abs() < 1e-3);
        if a.margin > 1e-3 {
            prop_assert_eq!(a.elliptic, b.elliptic);
        }
    }

    #[test]
    fn root_flags_match_the_discriminant(th in 0.0f64..PI, ph in 0.0f64..6.3, nth in 0.0f64..PI, nph in 0.0f64..6.3, t in 0.0f64..6.3) {
        let f = unit3(th, ph);
        let n = unit3(nth, nph);
        let xp = orthonormal_to(&n, t);
        let r = classify_roots(&f, &n, &xp, 1e-6).unwrap();
        let dp = delta_prime(&f, &n, &xp);
        // Δ′ is the reduced discriminant of the τ-quadratic.
        prop_assert!((r.discriminant - dp).abs() <= 1e-12);
        if !r.degenerate {
            match r.kind {
                RootKind::ComplexPair => prop_assert!(dp < 1e-9),
                RootKind::DistinctReal => prop_assert!(dp > -1e-9),
                RootKind::DoubleReal => prop_assert!(dp.abs() <= 1e-9),
                RootKind::Degenerate => prop_assert!(false),
            }
        }
    }

    #[test]
    fn ucp_active_set_drops_characteristic_forms(t1 in 0.0f64..PI, t2 in 0.0f64..PI, s in 0.0f64..6.3) {
        let fam = FormFamily::new(&[unit2(t1), unit2(t2)]).unwrap();
        let n = unit2(s);
        let v = check_ucp_point(&fam, &n, &UcpOptions::default()).unwrap();
        for j in 0..2 {
            let active = fam.q(j, &n).abs() > UcpOptions::default().tolerance;
            prop_assert_eq!(v.active_set.contains(&j), active);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solve_is_linear_in_boundary_data(a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.1f64..0.9) {
        let g = Grid::unit_square(10).unwrap();
        let gamma = ScalarField::from_fn(g, |p| 1.0 + c * p[0] * p[1]).unwrap();
        let s = ConductivitySolver::new(&gamma, SolverOptions::default()).unwrap();
        let f1 = BoundaryData::from_fn(g, TraceKind::Dirichlet, |p, _| p[0] * p[0]).unwrap();
        let f2 = BoundaryData::from_fn(g, TraceKind::Dirichlet, |p, _| (3.0 * p[1]).sin()).unwrap();
        let f = f1.zip_with(&f2, |x, y| a * x + b * y).unwrap();
        let u = s.solve(&f, None).unwrap();
        let u1 = s.solve(&f1, None).unwrap();
        let u2 = s.solve(&f2, None).unwrap();
        for i in 0..g.len() {
            let e = a * u1.values()[i] + b * u2.values()[i];
            prop_assert!((u.values()[i] - e).abs() <= 1e-10);
        }
    }

    #[test]
    fn maximum_principle_and_nonnegative_power_density(c in -0.5f64..0.5, k in 1.0f64..5.0) {
        let g = Grid::unit_square(12).unwrap();
        let gamma = ScalarField::from_fn(g, |p| 1.0 + c * (k * p[0]).sin() * p[1]).unwrap();
        let f = BoundaryData::from_fn(g, TraceKind::Dirichlet, |p, _| (k * p[0]).cos() + p[1] * p[1]).unwrap();
        let u = ConductivitySolver::new(&gamma, SolverOptions::default()).unwrap().solve(&f, None).unwrap();
        let (lo, hi) = f.faces().iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        prop_assert!(u.values().iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
        let h = power_density(&gamma, &u).unwrap();
        prop_assert!(h.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn assembled_operators_are_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let g = Grid::unit_square(8).unwrap();
        let gamma = ScalarField::from_fn(g, |p| 1.0 + 0.2 * p[0]).unwrap();
        let set: Vec<BoundaryData> = [|p: [f64; 3]| p[0], |p: [f64; 3]| p[0] + 0.7 * p[1]]
            .iter()
            .map(|f| BoundaryData::from_fn(g, TraceKind::Dirichlet, |p, _| f(p)).unwrap())
            .collect();
        let ds = synthesize_dataset(&gamma, &set, 1e-3, SolverOptions::default()).unwrap();
        let base = BaseState::new(&gamma, &ds.u, 1e-3).unwrap();
        for kind in [SystemKind::First, SystemKind::Eliminated, SystemKind::Eliminated2, SystemKind::Triangular] {
            let op = assemble(&base, kind).unwrap();
            let n = op.ncols();
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed * 3) % 13) as f64 * 0.1).collect();
            let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let (ax, ay, az) = (op.apply_matrix_free(&x), op.apply_matrix_free(&y), op.apply_matrix_free(&z));
            let scale = ax.iter().chain(&ay).fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..az.len() {
                prop_assert!((az[i] - a * ax[i] - b * ay[i]).abs() <= 1e-11 * (1.0 + scale));
            }
        }
    }
}

#[test]
fn normal_trace_converges_to_gradient_dot_normal() {
    let u = |p: [f64; 3]| (1.3 * p[0]).sin() * (0.7 * p[1] + 0.2).exp();
    let grad = |p: [f64; 3]| {
        [
            1.3 * (1.3 * p[0]).cos() * (0.7 * p[1] + 0.2).exp(),
            0.7 * (1.3 * p[0]).sin() * (0.7 * p[1] + 0.2).exp(),
        ]
    };
    let err = |n: usize| {
        let g = Grid::unit_square(n).unwrap();
        let f = ScalarField::from_fn(g, u).unwrap();
        let exact = BoundaryData::from_fn(g, TraceKind::Neumann, |p, nu| {
            let d = grad(p);
            d[0] * nu[0] + d[1] * nu[1]
        })
        .unwrap();
        normal_trace(&f).zip_with(&exact, |a, b| a - b).unwrap().max_abs(false)
    };
    let ratio = err(17) / err(33);
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn partial_of_affine_field_is_exact_in_3d() {
    let g = Grid::unit_cube(5).unwrap();
    let f = ScalarField::from_fn(g, |p| 2.0 * p[0] - 3.0 * p[1] + 0.5 * p[2] + 1.0).unwrap();
    for (axis, c) in [2.0, -3.0, 0.5].into_iter().enumerate() {
        assert!(partial(&g, f.values(), axis).iter().all(|d| (d - c).abs() < 1e-12));
    }
}
