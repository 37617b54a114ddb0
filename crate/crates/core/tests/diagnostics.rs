mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::{DMatrix, DVector};
use sdemor::diagnostics::*;
use sdemor::gramians::{compute_gramians, GramianKind, GramianOptions, GramianPair, SolveStats};
use sdemor::simulate::{simulate, NoiseBundle, SimOptions};
use sdemor::{ControlSignal, Error, Nonlinearity};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(x.to_vec())
}

fn fig1_q() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.49426, 0.58159, 0.58159, 0.68542])
}

fn identity_pair(n: usize, c2: f64) -> GramianPair<f64> {
    GramianPair {
        p: DMatrix::identity(n, n),
        q: DMatrix::identity(n, n),
        c1: c2,
        c2,
        kind: GramianKind::Unclassified,
        cert_p: 0.0,
        cert_q: 0.0,
        q_residual: 0.0,
        lmi_max_eig: 0.0,
        stats: SolveStats::default(),
    }
}

#[test]
fn gap_at_origin_is_zero() {
    let q = fig1_q();
    for f in [Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()] {
        assert_eq!(monotonicity_gap(&f, &q, false, &v(&[0.0, 0.0]), 1.0).unwrap(), 0.0);
        assert_eq!(monotonicity_gap(&f, &q, true, &v(&[0.0, 0.0]), 1.0).unwrap(), 0.0);
    }
}

#[test]
fn monotonicity_gap_closed_form() {
    // F2, M = I: ⟨x, x − x∘3 − c2 x⟩ = (1 − c2)‖x‖² − Σ x_i⁴.
    let x = v(&[0.5, -1.0, 2.0]);
    let g = monotonicity_gap(&Nonlinearity::f2(), &DMatrix::identity(3, 3), false, &x, 0.25).unwrap();
    assert_relative_eq!(g, 0.75 * 5.25 - (0.0625 + 1.0 + 16.0), max_relative = 1e-14);
    // Inverse mode with X = 2I halves the gap.
    let g2 = monotonicity_gap(&Nonlinearity::f2(), &(DMatrix::identity(3, 3) * 2.0), true, &x, 0.25).unwrap();
    assert_relative_eq!(g2, g / 2.0, max_relative = 1e-14);
}

#[test]
fn lipschitz_gap_identities() {
    let q = fig1_q();
    let x = v(&[0.7, -1.3]);
    for f in [Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()] {
        for inv in [false, true] {
            let m = monotonicity_gap(&f, &q, inv, &x, 0.4).unwrap();
            let plus = lipschitz_gap(&f, &q, inv, LipschitzSign::Plus, &x, &x, 0.4).unwrap();
            let minus = lipschitz_gap(&f, &q, inv, LipschitzSign::Minus, &x, &x, 0.4).unwrap();
            assert_relative_eq!(plus, 4.0 * m, max_relative = 1e-12);
            assert_eq!(minus, 0.0);
        }
    }
}

#[test]
fn plus_form_fails_for_the_cubic_with_quadratic_term() {
    // x = 1, z = ε − 1 with ε = 10⁻³; value from direct scalar evaluation.
    let one = DMatrix::identity(1, 1);
    let g = lipschitz_gap(&Nonlinearity::f1(0.1), &one, false, LipschitzSign::Plus, &v(&[1.0]), &v(&[1e-3 - 1.0]), 0.30333)
        .unwrap();
    assert!(g > 0.0);
    assert_relative_eq!(g, 0.0021944007690000017, max_relative = 1e-9);
}

#[test]
fn local_max_criterion() {
    let (ok, ct) = hessian_local_max_check(&Nonlinearity::f2(), 1.0, 3).unwrap();
    assert!(!ok);
    assert_eq!(ct, 0.0);
    let (ok, ct) = hessian_local_max_check(&Nonlinearity::f2(), 1.01, 3).unwrap();
    assert!(ok);
    assert_relative_eq!(ct, 0.01, max_relative = 1e-12);
    let (ok, ct) = hessian_local_max_check(&Nonlinearity::f1(0.1), 0.30333, 4).unwrap();
    assert!(ok);
    assert_relative_eq!(ct, 0.40333, max_relative = 1e-12);
    let (ok, ct) = hessian_local_max_check(&Nonlinearity::f3(), 1.5, 2).unwrap();
    assert!(ok && ct == 0.5);
    let (ok, ct) = hessian_local_max_check(&Nonlinearity::zero(), 1.0, 2).unwrap();
    assert!(ok && ct == 1.0);
    let custom = Nonlinearity::custom(|x: &[f64], o: &mut [f64]| o.copy_from_slice(x), 1.0, None, None);
    assert!(matches!(hessian_local_max_check(&custom, 2.0, 2), Err(Error::Unsupported(_))));
    let skew = custom.with_jacobian_at_zero(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    assert!(!hessian_local_max_check(&skew, 2.0, 2).unwrap().0);
}

#[test]
fn fig1_grid_is_mostly_non_positive() {
    let metric = GapMetric::new(&fig1_q(), false).unwrap();
    let rep = monotonicity_grid_scan(&Nonlinearity::f2(), &metric, 1.0, -2.0, 2.0, 400).unwrap();
    assert_eq!(rep.values.len(), 160_000);
    assert_eq!(rep.coords.as_ref().unwrap().ncols(), 160_000);
    assert_eq!(rep.outcome, GapOutcome::PositiveSomewhere);
    assert!(rep.positive_fraction < 0.05);
    assert!(rep.max_positive < 0.05 * rep.min_value.abs());
    let counted = rep.values.iter().filter(|x| **x > 0.0).count() as f64 / 160_000.0;
    assert_eq!(counted, rep.positive_fraction);
}

#[test]
fn euclidean_gap_at_c_f_is_non_positive() {
    for (f, n) in [(Nonlinearity::f1(0.1), 3), (Nonlinearity::f2(), 3), (Nonlinearity::f3(), 4)] {
        let metric = GapMetric::new(&DMatrix::identity(n, n), false).unwrap();
        let rep = monotonicity_sample_scan(&f, &metric, f.c_f, -2.0, 2.0, 100_000, 9).unwrap();
        assert_eq!(rep.positive_count, 0, "{:?}", f.kind);
    }
}

#[test]
fn declared_constants_survive_sampling() {
    for f in [Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()] {
        let chk = check_declared_constants(&f, 3, 100_000, 4).unwrap();
        assert!(chk.all_hold(), "{:?}: {chk:?}", f.kind);
    }
    // A constant that is too small is caught.
    let mut f = Nonlinearity::f2();
    f.c_f = 0.5;
    assert!(check_declared_constants(&f, 2, 10_000, 4).unwrap().c_f_violations > 0);
}

#[test]
fn scans_are_reproducible() {
    let metric = GapMetric::new(&fig1_q(), true).unwrap();
    let a = lipschitz_sample_scan(&Nonlinearity::f2(), &metric, LipschitzSign::Plus, 1.0, -2.0, 2.0, 10_000, 5).unwrap();
    let b = lipschitz_sample_scan(&Nonlinearity::f2(), &metric, LipschitzSign::Plus, 1.0, -2.0, 2.0, 10_000, 5).unwrap();
    assert_eq!(a.values, b.values);
    assert!(monotonicity_grid_scan(&Nonlinearity::f2(), &GapMetric::new(&DMatrix::identity(3, 3), false).unwrap(), 1.0, -2.0, 2.0, 10)
        .is_err());
}

#[test]
fn average_checks_on_trivial_cases() {
    // Linear system, c2 = 0: both sides vanish.
    let sys = diffusion(4, Nonlinearity::zero());
    let nb = NoiseBundle::for_horizon(&sys.k, 0.2, 1e-3, 64, 1).unwrap();
    let ens = simulate(&sys, &ControlSignal::smooth(), 0.2, &nb, &DVector::zeros(4), &SimOptions { store_states: true, state_stride: 5 })
        .unwrap();
    let pair = identity_pair(4, 0.0);
    let rep = average_monotonicity_check(&sys, &pair, &ens).unwrap();
    assert!(rep.all_ok());
    assert!(rep.lhs_p.iter().chain(&rep.rhs_q).all(|v| *v == 0.0));
    // Nonlinear system, P = Q = I, c2 = c_f: the integrand is non-positive path-wise.
    let sys = diffusion(4, Nonlinearity::f2());
    let ens = simulate(&sys, &ControlSignal::oscillating(), 0.2, &nb, &DVector::zeros(4), &SimOptions { store_states: true, state_stride: 5 })
        .unwrap();
    let rep = average_monotonicity_check(&sys, &identity_pair(4, 1.0), &ens).unwrap();
    assert!(rep.all_ok());
    assert!(rep.lhs_p.iter().zip(&rep.rhs_p).all(|(l, r)| l <= r));
    assert!(rep.margin_p >= 0.0);
    // States are required.
    let bare = simulate(&sys, &ControlSignal::oscillating(), 0.2, &nb, &DVector::zeros(4), &SimOptions::default()).unwrap();
    assert!(matches!(average_monotonicity_check(&sys, &pair, &bare), Err(Error::Config(_))));
}

#[test]
fn energy_estimates_hold_on_the_diffusion_model() {
    let sys = diffusion(8, Nonlinearity::f1(F1_A));
    let pair = compute_gramians(&sys, F1_C, F1_C, &GramianOptions::default()).unwrap();
    let nb = NoiseBundle::for_horizon(&sys.k, 0.5, 1e-3, 256, 21).unwrap();
    let u = ControlSignal::oscillating();
    let ens = simulate(&sys, &u, 0.5, &nb, &DVector::zeros(8), &SimOptions { store_states: true, state_stride: 5 }).unwrap();
    let avg = average_monotonicity_check(&sys, &pair, &ens).unwrap();
    assert!(avg.all_ok());
    let rep = energy_estimate_check(&sys, &pair, &ens, &u).unwrap();
    assert!(rep.all_ok());
    assert_eq!(rep.p_terms.len(), 8);
    // Zero control from rest: nothing moves, every bound is zero.
    let z = ControlSignal::zero(2);
    let ens = simulate(&sys, &z, 0.5, &nb, &DVector::zeros(8), &SimOptions { store_states: true, state_stride: 5 }).unwrap();
    let rep = energy_estimate_check(&sys, &pair, &ens, &z).unwrap();
    assert!(rep.p_terms.iter().all(|t| t.sup_lhs == 0.0 && t.bound == 0.0 && t.ok));
}

#[test]
fn classification_uses_scans_and_averages() {
    // Identity pair, c2 = c_f: gaps are non-positive everywhere for F2, and
    // the plus form with constant 1 holds too.
    let sys = diffusion(3, Nonlinearity::f2());
    let pair = identity_pair(3, 1.0);
    let opts = ClassifyOptions { samples: 20_000, lipschitz_samples: 20_000, ..Default::default() };
    let cl = classify(&sys, &pair, &[], &opts).unwrap();
    assert_eq!(cl.kind, GramianKind::OneSidedLipschitz);
    // The computed pair of the diffusion model has positive gaps somewhere.
    let sys = diffusion(6, Nonlinearity::f2());
    let pair = compute_gramians(&sys, 1.0, 1.0, &GramianOptions::default()).unwrap();
    let nb = NoiseBundle::for_horizon(&sys.k, 0.5, 1e-3, 128, 2).unwrap();
    let ens: Vec<_> = [ControlSignal::oscillating(), ControlSignal::smooth()]
        .iter()
        .map(|u| simulate(&sys, u, 0.5, &nb, &DVector::zeros(6), &SimOptions { store_states: true, state_stride: 10 }).unwrap())
        .collect();
    let cl = classify(&sys, &pair, &ens, &opts).unwrap();
    assert_eq!(cl.global_q.outcome, GapOutcome::PositiveSomewhere);
    assert_eq!(cl.kind, GramianKind::AverageMonotonicity);
    assert_eq!(cl.average.len(), 2);
    let cl = classify(&sys, &pair, &[], &opts).unwrap();
    assert_eq!(cl.kind, GramianKind::Unclassified);
}
