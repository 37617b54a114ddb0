mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::DVector;
use sdemor::balancing::balance;
use sdemor::error_bounds::*;
use sdemor::gramians::{compute_gramians, GramianOptions};
use sdemor::simulate::NoiseBundle;
use sdemor::{ControlSignal, Nonlinearity};

#[test]
fn classical_bound_formula() {
    let sigma = DVector::from_vec(vec![1.0, 0.5, 0.25, 0.125]);
    let u = ControlSignal::<f64>::smooth();
    let energy = control_energy(&u, 1.0, 0.0);
    assert_relative_eq!(energy, 4.5 * (1.0 - (-2f64).exp()) + 2.0, max_relative = 1e-10);
    assert_relative_eq!(classical_bound(&sigma, 2, &u, 1.0, 0.0), 2.0 * 0.375 * energy.sqrt(), max_relative = 1e-14);
    assert_eq!(classical_bound(&sigma, 4, &u, 1.0, 0.0), 0.0);
    // Weighted energy: ∫ 4·e^{c(1−s)} ds for a constant control of norm 2.
    let c = ControlSignal::custom(1, |_t: f64, o: &mut [f64]| o[0] = 2.0);
    assert_relative_eq!(control_energy(&c, 1.0, 1.5), 4.0 * (1.5f64.exp() - 1.0) / 1.5, max_relative = 1e-10);
}

#[test]
fn full_order_and_linear_gap_bound() {
    let sys = diffusion(6, Nonlinearity::zero());
    let pair = compute_gramians(&sys, 0.0, 0.0, &GramianOptions::default()).unwrap();
    let bal = balance(&sys, &pair.p, &pair.q).unwrap();
    let noise = NoiseBundle::for_horizon(&sys.k, 0.5, 1e-3, 64, 7).unwrap();
    let u = ControlSignal::oscillating();
    let rep = error_table(&sys, &bal, &[2, 6], &[u.clone()], &noise, &pair, &[2]).unwrap();
    let full = rep.rows.iter().find(|r| r.r == 6).unwrap();
    assert!(full.rel_error < 1e-10, "{}", full.rel_error);
    let row = rep.rows.iter().find(|r| r.r == 2).unwrap();
    let gap = row.gap_bound.unwrap();
    // No nonlinearity and c2 = 0: every gap vanishes and the bound collapses.
    assert_relative_eq!(gap, row.classical_bound, max_relative = 1e-6);
    assert!(row.rel_error <= row.classical_bound * (1.0 + 3.0 * row.mc_se));
    let direct = gap_bound(&sys, &bal, 2, &u, &noise, &pair).unwrap();
    assert!(direct.terms.iter().all(|t| t.q_gap == 0.0 && t.p_gap == 0.0 && !t.clipped));
    assert_eq!(direct.terms.len(), 4);
}

#[test]
fn telescoping_sum_dominates() {
    let sys = diffusion(6, Nonlinearity::f2());
    let pair = compute_gramians(&sys, 1.0, 1.0, &GramianOptions::default()).unwrap();
    let bal = balance(&sys, &pair.p, &pair.q).unwrap();
    let noise = NoiseBundle::for_horizon(&sys.k, 0.5, 1e-3, 128, 3).unwrap();
    let rep = telescoping_check(&sys, &bal, 2, &ControlSignal::smooth(), &noise, pair.weight_exponent()).unwrap();
    assert_eq!(rep.terms.len(), 4);
    assert!(rep.lhs.value <= rep.rhs * (1.0 + 3.0 * rep.rhs_se) + 1e-15);
    assert_eq!(rep.excluded, 0);
}

#[test]
fn gap_bound_rejects_full_order() {
    let sys = diffusion(4, Nonlinearity::zero());
    let pair = compute_gramians(&sys, 0.0, 0.0, &GramianOptions::default()).unwrap();
    let bal = balance(&sys, &pair.p, &pair.q).unwrap();
    let noise = NoiseBundle::for_horizon(&sys.k, 0.1, 1e-3, 4, 7).unwrap();
    assert!(gap_bound(&sys, &bal, 4, &ControlSignal::smooth(), &noise, &pair).is_err());
}
