//! Shifted generalized Lyapunov operator
//! `L_{c1}(X) = (A+c1 I)ᵀX + X(A+c1 I) + Σ_{ij} N_iᵀ X N_j k_ij`,
//! its mean-square stability test and equality solves.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, LyapunovSchur};
use crate::model::StochasticSystem;
use crate::scalar::Scalar;

/// Matrix size up to which the spectral abscissa uses the dense Kronecker matrix.
pub const DENSE_ABSCISSA_MAX_N: usize = 60;

#[derive(Debug, Clone)]
pub struct LyapunovOperator<'a, T: Scalar> {
    pub sys: &'a StochasticSystem<T>,
    pub c1: T,
    shifted_a: DMatrix<T>,
}

impl<'a, T: Scalar> LyapunovOperator<'a, T> {
    pub fn new(sys: &'a StochasticSystem<T>, c1: T) -> Self {
        let n = sys.n();
        let shifted_a = &sys.a + DMatrix::<T>::identity(n, n) * c1;
        Self { sys, c1, shifted_a }
    }

    /// `A + c1 I`.
    pub fn shifted_a(&self) -> &DMatrix<T> {
        &self.shifted_a
    }

    /// Noise part `Σ_{ij} N_iᵀ X N_j k_ij`.
    pub fn noise_term(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let n = self.sys.n();
        let d = self.sys.d();
        let mut out = DMatrix::zeros(n, n);
        if d == 0 {
            return out;
        }
        let xn: Vec<DMatrix<T>> = self.sys.n_mats.iter().map(|nj| x * nj).collect();
        for i in 0..d {
            let mut acc = DMatrix::<T>::zeros(n, n);
            for (j, xnj) in xn.iter().enumerate() {
                let kij = self.sys.k[(i, j)];
                if kij != T::zero() {
                    acc += xnj * kij;
                }
            }
            out += self.sys.n_mats[i].transpose() * acc;
        }
        out
    }

    pub fn apply(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let a = &self.shifted_a;
        a.transpose() * x + x * a + self.noise_term(x)
    }
}

/// Explicit `n² × n²` matrix of the operator's action on `vec(X)`
/// (its spectrum is that of `I⊗A' + A'⊗I + Σ N_i⊗N_j k_ij`).
pub fn kronecker_matrix<T: Scalar>(sys: &StochasticSystem<T>, c1: T) -> DMatrix<T> {
    let n = sys.n();
    let a = &sys.a + DMatrix::<T>::identity(n, n) * c1;
    let id = DMatrix::<T>::identity(n, n);
    let mut m = linalg::kron(&id, &a.transpose()) + linalg::kron(&a.transpose(), &id);
    for i in 0..sys.d() {
        for j in 0..sys.d() {
            let kij = sys.k[(i, j)];
            if kij != T::zero() {
                m += linalg::kron(&sys.n_mats[j].transpose(), &sys.n_mats[i].transpose()) * kij;
            }
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbscissaMethod {
    /// Dense Kronecker eigensolve for `n ≤ 60`, power iteration beyond.
    Auto,
    Dense,
    PowerIteration,
}

/// Largest real part of the spectrum of `L_{c1}`; negative iff the shifted
/// system is mean-square asymptotically stable.
pub fn spectral_abscissa<T: Scalar>(sys: &StochasticSystem<T>, c1: T) -> Result<T> {
    spectral_abscissa_with(sys, c1, AbscissaMethod::Auto)
}

pub fn spectral_abscissa_with<T: Scalar>(sys: &StochasticSystem<T>, c1: T, method: AbscissaMethod) -> Result<T> {
    let dense = match method {
        AbscissaMethod::Auto => sys.n() <= DENSE_ABSCISSA_MAX_N,
        AbscissaMethod::Dense => true,
        AbscissaMethod::PowerIteration => false,
    };
    if dense {
        let m = kronecker_matrix(sys, c1);
        if linalg::asymmetry(&m) <= T::c(100.0) * T::eps() {
            Ok(linalg::max_eig(&m))
        } else {
            linalg::max_real_eig(&m)
        }
    } else {
        abscissa_power(sys, c1)
    }
}

// The operator is resolvent positive, so its abscissa is a real eigenvalue
// with a PSD eigenvector. After shifting c1 far enough to the left that the
// operator is stable, -L⁻¹ is a positive map whose spectral radius is
// -1/abscissa; inverse power iteration on symmetric matrices finds it.
fn abscissa_power<T: Scalar>(sys: &StochasticSystem<T>, c1: T) -> Result<T> {
    let n = sys.n();
    let a = &sys.a + DMatrix::<T>::identity(n, n) * c1;
    let mut noise_bound = T::zero();
    let norms: Vec<T> = sys.n_mats.iter().map(|m| m.norm()).collect();
    for i in 0..sys.d() {
        for j in 0..sys.d() {
            noise_bound += sys.k[(i, j)].abs() * norms[i] * norms[j];
        }
    }
    let upper = linalg::max_eig(&(&a + a.transpose())) + noise_bound;
    // Shift by sigma so that the shifted abscissa is at most -1.
    let sigma = if upper > -T::one() { -(upper + T::one()) * T::c(0.5) } else { T::zero() };
    let op = LyapunovOperator::new(sys, c1 + sigma);
    let opts = LyapunovOptions { tol: T::c(1e-12), max_iter: 2000 };
    let mut x = DMatrix::<T>::identity(n, n) / T::from_usize_lossy(n).sqrt();
    let mut rho = T::zero();
    for _ in 0..5000 {
        let y = solve_equality_with(&op, &x, &opts)?.x;
        let nrm = y.norm();
        if nrm == T::zero() {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        let next = y / nrm;
        let diff = (&next - &x).norm();
        x = next;
        let converged = (nrm - rho).abs() <= T::c(1e-12) * nrm && diff <= T::c(1e-8);
        rho = nrm;
        if converged {
            return Ok(-T::one() / rho - T::c(2.0) * sigma);
        }
    }
    Err(Error::Numerical("power iteration for the spectral abscissa did not converge".into()))
}

#[derive(Debug, Clone, Copy)]
pub struct LyapunovOptions<T> {
    /// Relative residual target: `‖L(X)+RHS‖_F ≤ tol ‖RHS‖_F`.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for LyapunovOptions<T> {
    fn default() -> Self {
        Self { tol: T::c(1e-10).max(T::eps() * T::c(100.0)), max_iter: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution<T: Scalar> {
    pub x: DMatrix<T>,
    /// Absolute Frobenius residual `‖L(X) + RHS‖_F`.
    pub residual: T,
    pub iterations: usize,
}

/// Solves `L_{c1}(X) = −RHS` with default options.
pub fn solve_equality<T: Scalar>(op: &LyapunovOperator<'_, T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    Ok(solve_equality_with(op, rhs, &LyapunovOptions::default())?.x)
}

/// Fixed-point iteration `X_{k+1} = lyap(A', RHS + Π(X_k))` with Bartels–Stewart
/// inner solves; `Π` is the noise part of the operator.
pub fn solve_equality_with<T: Scalar>(
    op: &LyapunovOperator<'_, T>,
    rhs: &DMatrix<T>,
    opts: &LyapunovOptions<T>,
) -> Result<LyapunovSolution<T>> {
    let n = op.sys.n();
    linalg::dims_square(rhs, n, "Lyapunov right-hand side")?;
    let rhs = linalg::sym(rhs);
    let target = opts.tol * rhs.norm();
    let std = LyapunovSchur::new(op.shifted_a())?;
    if std.abscissa() >= T::zero() {
        return Err(Error::Stability(format!(
            "A + c1 I is not Hurwitz (eigenvalue real part {}); choose a smaller shift c1",
            std.abscissa()
        )));
    }
    let mut x = linalg::sym(&std.solve(&(-&rhs))?);
    let mut pi_prev: Option<DMatrix<T>> = None;
    let mut last_res = T::max_value().unwrap_or(T::c(f64::MAX));
    let mut growth = 0usize;
    for it in 0..=opts.max_iter {
        let pi = op.noise_term(&x);
        // L(X_k) + RHS = Π(X_k) − Π(X_{k−1}) because X_k solves the standard
        // equation with Π(X_{k−1}) moved to the right.
        let res = match &pi_prev {
            Some(p) => (&pi - p).norm(),
            None => pi.norm(),
        };
        if !res.is_finite() {
            break;
        }
        if res <= target {
            let residual = (op.apply(&x) + &rhs).norm();
            return Ok(LyapunovSolution { x, residual, iterations: it });
        }
        if res > last_res {
            growth += 1;
            if growth >= 5 {
                break;
            }
        } else {
            growth = 0;
        }
        last_res = res;
        x = linalg::sym(&std.solve(&(-(&rhs + &pi)))?);
        pi_prev = Some(pi);
    }
    Err(Error::Stability(format!(
        "generalized Lyapunov iteration did not converge (residual {last_res}); the shifted system is not \
         mean-square stable or only marginally so, choose a smaller shift c1"
    )))
}
