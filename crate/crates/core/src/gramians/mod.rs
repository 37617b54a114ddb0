//! Gramian pair `(P, Q)`: `Q` solves `L_{c1}(Q) = −CᵀC`, and `P` is the
//! minimal-trace solution of the Schur-complement LMI equivalent to
//! `L_{c1}(P⁻¹) + P⁻¹BBᵀP⁻¹ ⪯ 0`.

pub mod barrier;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lyapunov::{solve_equality_with, LyapunovOperator, LyapunovOptions};
use crate::model::{Nonlinearity, NonlinearityKind, StochasticSystem};
use crate::scalar::Scalar;

pub use barrier::{BarrierOptions, BarrierResult};

/// Largest admissible condition number of `K`.
pub const K_COND_MAX: f64 = 1e12;
pub const TOL_CERT: f64 = 1e-7;

/// Which defining inequalities a pair has been shown to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramianKind {
    /// Not yet classified by the diagnostics checks.
    Unclassified,
    GlobalMonotonicity,
    AverageMonotonicity,
    OneSidedLipschitz,
}

#[derive(Debug, Clone)]
pub struct GramianPair<T: Scalar> {
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub c1: T,
    pub c2: T,
    pub kind: GramianKind,
    /// `λ_min(−(L(P⁻¹) + P⁻¹BBᵀP⁻¹))`.
    pub cert_p: T,
    /// `λ_min(−(L(Q) + CᵀC))`.
    pub cert_q: T,
    /// `‖L(Q) + CᵀC‖_F`.
    pub q_residual: T,
    /// Largest eigenvalue of the block LMI matrix at `P` (≤ 0 when feasible).
    pub lmi_max_eig: T,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub q_iterations: usize,
    pub barrier_outer: usize,
    pub barrier_newton: usize,
}

impl<T: Scalar> GramianPair<T> {
    /// `c = max(0, 2(c2 − c1))`, the exponential weight in the energy and error bounds.
    pub fn weight_exponent(&self) -> T {
        weight_exponent(self.c1, self.c2)
    }
}

pub fn weight_exponent<T: Scalar>(c1: T, c2: T) -> T {
    (T::c(2.0) * (c2 - c1)).max(T::zero())
}

/// Default `(c1, c2)`: the one-sided Lipschitz constant for `F1`, the
/// monotonicity constant otherwise.
pub fn default_shifts<T: Scalar>(f: &Nonlinearity<T>) -> (T, T) {
    let c = match f.kind {
        NonlinearityKind::F1 { .. } => f.c_lip_minus.unwrap_or(f.c_f),
        NonlinearityKind::Custom => f.c_lip_minus.unwrap_or(f.c_f),
        _ => f.c_f,
    };
    (c, c)
}

#[derive(Debug, Clone, Copy)]
pub struct GramianOptions<T> {
    pub lyapunov: LyapunovOptions<T>,
    pub barrier: BarrierOptions<T>,
    pub tol_cert: T,
}

impl<T: Scalar> Default for GramianOptions<T> {
    fn default() -> Self {
        Self { lyapunov: LyapunovOptions::default(), barrier: BarrierOptions::default(), tol_cert: T::c(TOL_CERT) }
    }
}

/// Solves `L_{c1}(Q) = −CᵀC`.
pub fn compute_q<T: Scalar>(sys: &StochasticSystem<T>, c1: T) -> Result<DMatrix<T>> {
    Ok(compute_q_with(sys, c1, &LyapunovOptions::default())?.0)
}

/// Returns `Q` together with its residual and iteration count.
pub fn compute_q_with<T: Scalar>(
    sys: &StochasticSystem<T>,
    c1: T,
    opts: &LyapunovOptions<T>,
) -> Result<(DMatrix<T>, T, usize)> {
    let op = LyapunovOperator::new(sys, c1);
    let ctc = sys.c.transpose() * &sys.c;
    let sol = solve_equality_with(&op, &ctc, opts).map_err(|e| match e {
        Error::Stability(m) => Error::Stability(format!("{m} (Q equation)")),
        other => other,
    })?;
    Ok((sol.x, sol.residual, sol.iterations))
}

fn k_inverse<T: Scalar>(sys: &StochasticSystem<T>) -> Result<DMatrix<T>> {
    if sys.d() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let cond = linalg::cond_spd(&sys.k);
    if !(cond <= T::c(K_COND_MAX)) {
        return Err(Error::Config(format!(
            "noise covariance K is singular or nearly so (condition number {cond:e}); the LMI needs K⁻¹"
        )));
    }
    linalg::spd_inverse(&sys.k).map_err(|_| Error::Config("noise covariance K is not invertible".into()))
}

/// `P = (γX)⁻¹` for the largest power of two `γ` with
/// `Y − γ X BBᵀ X ⪰ 0`, where `Y = −L_{c1}(X) ≻ 0`. Returns `(P, γ)`.
pub fn feasible_p_from_scaling<T: Scalar>(
    sys: &StochasticSystem<T>,
    c1: T,
    x: &DMatrix<T>,
) -> Result<(DMatrix<T>, T)> {
    linalg::dims_square(x, sys.n(), "X")?;
    let op = LyapunovOperator::new(sys, c1);
    let y = -op.apply(x);
    let ymin = linalg::min_eig(&y);
    let tol = T::c(1e-12) * y.norm().max(T::one());
    if !(ymin > tol) {
        return Err(Error::Precondition(format!(
            "X is not strictly dissipative for the shifted operator (min eigenvalue of −L(X) is {ymin:e})"
        )));
    }
    let xb = x * &sys.b;
    let m = &xb * xb.transpose();
    let xinv = linalg::spd_inverse(x)?;
    if m.norm() == T::zero() {
        return Ok((xinv, T::one()));
    }
    let ok = |g: T| linalg::min_eig(&(&y - &m * g)) >= -tol;
    let two = T::c(2.0);
    let mut g = T::one();
    if ok(g) {
        for _ in 0..200 {
            if !ok(g * two) {
                break;
            }
            g *= two;
        }
    } else {
        let mut found = false;
        for _ in 0..200 {
            g /= two;
            if ok(g) {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Numerical("no admissible scaling found for the feasible P".into()));
        }
    }
    Ok((xinv / g, g))
}

/// Minimal-trace `P` of the block LMI by a log-barrier interior-point method.
pub fn compute_p_min_trace<T: Scalar>(
    sys: &StochasticSystem<T>,
    c1: T,
    opts: &GramianOptions<T>,
) -> Result<BarrierResult<T>> {
    let kinv = k_inverse(sys)?;
    let op = LyapunovOperator::new(sys, c1);
    let id = DMatrix::<T>::identity(sys.n(), sys.n());
    let x = solve_equality_with(&op, &id, &opts.lyapunov)
        .map_err(|e| match e {
            Error::Stability(m) => Error::Stability(format!("{m} (no interior point for the P inequality)")),
            other => other,
        })?
        .x;
    let (p_edge, _) = feasible_p_from_scaling(sys, c1, &x)?;
    // Doubling P halves γ and moves the start strictly inside the feasible set.
    let p0 = p_edge * T::c(2.0);
    barrier::minimize_trace(op.shifted_a(), &sys.b, &sys.n_mats, &kinv, &p0, &opts.barrier)
}

/// `(cert_P, cert_Q)`: minimal eigenvalues of `−(L(P⁻¹) + P⁻¹BBᵀP⁻¹)` and
/// `−(L(Q) + CᵀC)`.
pub fn verify_gramian_inequalities<T: Scalar>(
    sys: &StochasticSystem<T>,
    p: &DMatrix<T>,
    q: &DMatrix<T>,
    c1: T,
) -> Result<(T, T)> {
    let n = sys.n();
    linalg::dims_square(p, n, "P")?;
    linalg::dims_square(q, n, "Q")?;
    if linalg::cond_spd(p) > T::c(1e14) {
        return Err(Error::Conditioning("P is not invertible to working precision".into()));
    }
    let pinv = linalg::spd_inverse(p)?;
    let op = LyapunovOperator::new(sys, c1);
    let pb = &pinv * &sys.b;
    let cert_p = linalg::min_eig(&-(op.apply(&pinv) + &pb * pb.transpose()));
    let cert_q = linalg::min_eig(&-(op.apply(q) + sys.c.transpose() * &sys.c));
    Ok((cert_p, cert_q))
}

/// Computes both Gramians and their certificates. The kind stays
/// [`GramianKind::Unclassified`] until the diagnostics have run.
pub fn compute_gramians<T: Scalar>(
    sys: &StochasticSystem<T>,
    c1: T,
    c2: T,
    opts: &GramianOptions<T>,
) -> Result<GramianPair<T>> {
    let kinv = k_inverse(sys)?;
    let (q, q_residual, q_iterations) = compute_q_with(sys, c1, &opts.lyapunov)?;
    let bar = compute_p_min_trace(sys, c1, opts)?;
    let (cert_p, cert_q) = verify_gramian_inequalities(sys, &bar.p, &q, c1)?;
    let op = LyapunovOperator::new(sys, c1);
    let lmi = barrier::lmi_matrix(op.shifted_a(), &sys.b, &sys.n_mats, &kinv, &bar.p);
    let lmi_max_eig = linalg::max_eig(&lmi);
    if cert_p < -opts.tol_cert {
        log::warn!("P certificate {cert_p:e} is below -{:e}", opts.tol_cert);
    }
    Ok(GramianPair {
        p: bar.p,
        q,
        c1,
        c2,
        kind: GramianKind::Unclassified,
        cert_p,
        cert_q,
        q_residual,
        lmi_max_eig,
        stats: SolveStats { q_iterations, barrier_outer: bar.outer_iterations, barrier_newton: bar.newton_iterations },
    })
}
