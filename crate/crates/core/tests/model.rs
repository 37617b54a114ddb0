mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::{DMatrix, DVector};
use sdemor::*;

#[test]
fn stencil_matches_finite_differences() {
    let n = 5;
    let sys = diffusion(n, Nonlinearity::zero());
    let h = 1.0 / 6.0;
    let ih2 = 1.0 / (h * h);
    for i in 0..n {
        assert_relative_eq!(sys.a[(i, i)], -2.0 * ih2, max_relative = 1e-14);
        for j in 0..n {
            if i.abs_diff(j) == 1 {
                assert_relative_eq!(sys.a[(i, j)], ih2, max_relative = 1e-14);
            } else if i != j {
                assert_eq!(sys.a[(i, j)], 0.0);
            }
        }
        assert_relative_eq!(sys.n_mats[0][(i, i)], 4.0 * ((i + 1) as f64 * h).sin(), max_relative = 1e-14);
        assert_relative_eq!(sys.n_mats[1][(i, i)], 4.0 * ((i + 1) as f64 * h).cos(), max_relative = 1e-14);
        assert_relative_eq!(sys.c[(0, i)], 0.2, max_relative = 1e-14);
    }
    assert_relative_eq!(sys.b[(0, 0)], ih2);
    assert_relative_eq!(sys.b[(n - 1, 1)], ih2);
    assert_eq!(sys.b.iter().filter(|v| **v != 0.0).count(), 2);
}

#[test]
fn neumann_variant_changes_last_row_and_input() {
    let sys = build_reaction_diffusion(
        4,
        1.0,
        Nonlinearity::f2(),
        &[NoiseProfile::FourSin, NoiseProfile::FourCos],
        k_corr(),
        Boundary::Neumann,
    )
    .unwrap();
    let h = 0.2;
    assert_relative_eq!(sys.a[(3, 3)], -1.0 / (h * h), max_relative = 1e-14);
    assert_relative_eq!(sys.a[(2, 2)], -2.0 / (h * h), max_relative = 1e-14);
    assert_relative_eq!(sys.b[(3, 1)], 1.0 / h, max_relative = 1e-14);
}

#[test]
fn nonlinearities_evaluate_closed_forms() {
    let x = DVector::from_vec(vec![0.5, -1.5, 2.0]);
    let a = 0.1;
    let f1 = Nonlinearity::f1(a).eval(&x);
    let f2 = Nonlinearity::f2().eval(&x);
    let f3 = Nonlinearity::f3().eval(&x);
    let nsq = x.norm_squared();
    for i in 0..3 {
        let v = x[i];
        assert_relative_eq!(f1[i], (1.0 + a) * v * v - v * v * v - a * v, max_relative = 1e-14);
        assert_relative_eq!(f2[i], v - v * v * v, max_relative = 1e-14);
        assert_relative_eq!(f3[i], v - v * nsq, max_relative = 1e-14);
    }
    assert!(Nonlinearity::<f64>::zero().eval(&x).iter().all(|v| *v == 0.0));
}

#[test]
fn declared_constants() {
    let f1 = Nonlinearity::f1(0.1);
    assert_relative_eq!(f1.c_f, 0.2025, max_relative = 1e-14);
    assert_relative_eq!(f1.c_lip_minus.unwrap(), F1_C, max_relative = 1e-14);
    assert!(f1.c_lip_plus.is_none());
    for f in [Nonlinearity::<f64>::f2(), Nonlinearity::f3()] {
        assert_eq!(f.c_f, 1.0);
        assert_eq!(f.c_lip_minus, Some(1.0));
        assert_eq!(f.c_lip_plus, Some(1.0));
    }
}

#[test]
fn controls_match_definitions() {
    let t = 0.37;
    let osc = ControlSignal::<f64>::oscillating().eval(t);
    assert_relative_eq!(osc[0], -3.0 * (20.0 * t).cos());
    assert_relative_eq!(osc[1], 2.0 * (10.0 * t).sin());
    let sm = ControlSignal::<f64>::smooth().eval(t);
    assert_relative_eq!(sm[0], -3.0 * (-t).exp());
    assert_relative_eq!(sm[1], 2.0 * t.sqrt());
    assert!(ControlSignal::<f64>::zero(2).eval(t).iter().all(|v| *v == 0.0));
}

#[test]
fn drift_adds_all_parts() {
    let sys = diffusion(4, Nonlinearity::f2());
    let x = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
    let u = DVector::from_vec(vec![1.0, -1.0]);
    let d = eval_drift(&sys, &x, &u).unwrap();
    let expected = &sys.a * &x + &sys.b * &u + sys.f.eval(&x);
    assert_relative_eq!(d, expected, max_relative = 1e-14);
    assert!(matches!(eval_drift(&sys, &x, &DVector::zeros(3)), Err(Error::Dimension(_))));
}

#[test]
fn rejects_bad_covariance() {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
    let r = StochasticSystem::new(m(-1.0), m(1.0), m(1.0), vec![m(1.0), m(1.0)], asym, Nonlinearity::zero());
    assert_eq!(r.unwrap_err().category(), ErrorCategory::Config);
    let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let r = StochasticSystem::new(m(-1.0), m(1.0), m(1.0), vec![m(1.0), m(1.0)], indef, Nonlinearity::zero());
    assert!(r.is_err());
    let r = StochasticSystem::new(m(-1.0), m(1.0), m(1.0), vec![m(1.0)], k_corr(), Nonlinearity::zero());
    assert!(r.is_err());
}

#[test]
fn equilibrium_normalization_moves_f0_to_input() {
    let base = scalar(-2.0, 1.0, 0.0, 1.0);
    let f = Nonlinearity::custom(|x: &[f64], o: &mut [f64]| o[0] = 0.5 - x[0] * x[0] * x[0], 0.5, None, None);
    let sys = base.with_nonlinearity(f);
    let norm = normalize_equilibrium(&sys);
    assert_eq!(norm.m(), 2);
    assert!(norm.constant_channel);
    assert_relative_eq!(norm.b[(0, 1)], 0.5);
    assert_eq!(norm.f.eval(&DVector::zeros(1))[0], 0.0);
    let u = ControlSignal::<f64>::zero(1).adapted_to(&norm);
    assert_eq!(u.m(), 2);
    let x = DVector::from_vec(vec![0.3]);
    let d0 = eval_drift(&sys, &x, &DVector::zeros(1)).unwrap();
    let d1 = eval_drift(&norm, &x, &u.eval(0.0)).unwrap();
    assert_relative_eq!(d0, d1, max_relative = 1e-14);
}

#[test]
fn build_rejects_bad_parameters() {
    let r = build_reaction_diffusion(1, 1.0, Nonlinearity::zero(), &[NoiseProfile::FourSin, NoiseProfile::FourCos], k_corr(), Boundary::Dirichlet);
    assert!(matches!(r, Err(Error::Config(_))));
    let r = build_reaction_diffusion(4, 1.0, Nonlinearity::zero(), &[NoiseProfile::FourSin], k_corr(), Boundary::Dirichlet);
    assert!(matches!(r, Err(Error::Config(_))));
}
