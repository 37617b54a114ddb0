#![allow(dead_code)]

use nalgebra::DMatrix;
use sdemor::{build_reaction_diffusion, Boundary, NoiseProfile, Nonlinearity, StochasticSystem};

pub const F1_A: f64 = 0.1;
/// `(a² − a + 1)/3` at `a = 0.1`.
pub const F1_C: f64 = 0.30333333333333334;

pub fn k_corr() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0])
}

pub fn diffusion(n: usize, f: Nonlinearity<f64>) -> StochasticSystem<f64> {
    build_reaction_diffusion(n, 1.0, f, &[NoiseProfile::FourSin, NoiseProfile::FourCos], k_corr(), Boundary::Dirichlet)
        .unwrap()
}

/// Scalar system `dx = (a x + b u) dt + ν x dW`, `y = c x`.
pub fn scalar(a: f64, b: f64, nu: f64, c: f64) -> StochasticSystem<f64> {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    StochasticSystem::new(m(a), m(b), m(c), vec![m(nu)], m(1.0), Nonlinearity::zero()).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Column-major `vec` of the generalized Lyapunov operator, assembled
/// entry by entry from its definition.
pub fn brute_force_operator(sys: &StochasticSystem<f64>, c1: f64) -> DMatrix<f64> {
    let n = sys.n();
    let a = &sys.a + DMatrix::identity(n, n) * c1;
    let mut m = DMatrix::zeros(n * n, n * n);
    for col in 0..n * n {
        let mut e = DMatrix::zeros(n, n);
        e[(col % n, col / n)] = 1.0;
        let mut img = a.transpose() * &e + &e * &a;
        for i in 0..sys.d() {
            for j in 0..sys.d() {
                img += sys.n_mats[i].transpose() * &e * &sys.n_mats[j] * sys.k[(i, j)];
            }
        }
        for row in 0..n * n {
            m[(row, col)] = img[(row % n, row / n)];
        }
    }
    m
}

/// Solves `L(X) = −R` through the dense `n² × n²` system.
pub fn kron_solve(sys: &StochasticSystem<f64>, c1: f64, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sys.n();
    let m = brute_force_operator(sys, c1);
    let rhs = nalgebra::DVector::from_iterator(n * n, r.iter().map(|v| -v));
    let x = m.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(n, n, x.as_slice())
}
