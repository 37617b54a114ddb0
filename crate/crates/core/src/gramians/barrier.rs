//! Log-barrier interior-point method for
//! `min tr(P)` s.t. `F(P) = [[A'P+PA'ᵀ+BBᵀ, P Nᵀ], [N P, −K⁻¹⊗P]] ⪯ 0`,
//! with `A' = A + c1 I` and `N = [N_1; …; N_d]`.
//!
//! Newton steps are taken in the orthonormal `svec` coordinates of the
//! symmetric variable. `F` is affine, `F(E) = Σ_s α_s U_s E V_sᵀ + const`,
//! which gives the barrier Hessian as `Σ_{s,t} α_s α_t (U_sᵀWU_t) E (V_tᵀWV_s)`
//! with `W = (−F(P))⁻¹`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, svec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions<T> {
    /// Stop once the barrier duality bound `N/t` is below `rel_gap · tr(P)`.
    pub rel_gap: T,
    /// Absolute floor for the duality bound, relative to the trace of the
    /// starting point (reached when the optimum is `P = 0`, e.g. `B = 0`).
    pub floor_gap: T,
    /// Barrier parameter growth per outer iteration.
    pub mu: T,
    /// Centering stops when half the squared Newton decrement is below this.
    pub newton_tol: T,
    pub max_newton: usize,
}

impl<T: Scalar> Default for BarrierOptions<T> {
    fn default() -> Self {
        // Tolerances are floored relative to the working precision.
        let eps = T::eps();
        Self {
            rel_gap: T::c(1e-6).max(eps * T::c(1e3)),
            floor_gap: T::c(1e-10).max(eps * T::c(10.0)),
            mu: T::c(5.0),
            newton_tol: T::c(1e-9).max(eps * T::c(100.0)),
            max_newton: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierResult<T: Scalar> {
    pub p: DMatrix<T>,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    /// Final duality bound `N/t`.
    pub gap: T,
}

// One term α·U E Vᵀ of the affine map; U and V are indices into `Lmi::factors`.
#[derive(Debug, Clone, Copy)]
struct Term<T> {
    u: usize,
    v: usize,
    alpha: T,
}

struct Lmi<T: Scalar> {
    n: usize,
    size: usize,
    // factors[0] = [A'; N_1; …; N_d], factors[1] = [I; 0], factors[2+i] selects noise block i.
    factors: Vec<DMatrix<T>>,
    terms: Vec<Term<T>>,
    constant: DMatrix<T>,
}

impl<T: Scalar> Lmi<T> {
    fn new(a_shift: &DMatrix<T>, bbt: &DMatrix<T>, n_mats: &[DMatrix<T>], kinv: &DMatrix<T>) -> Self {
        let n = a_shift.nrows();
        let d = n_mats.len();
        let size = n * (1 + d);
        let mut l = DMatrix::zeros(size, n);
        l.view_mut((0, 0), (n, n)).copy_from(a_shift);
        for (i, ni) in n_mats.iter().enumerate() {
            l.view_mut((n * (i + 1), 0), (n, n)).copy_from(ni);
        }
        let mut r = DMatrix::zeros(size, n);
        r.view_mut((0, 0), (n, n)).fill_with_identity();
        let mut factors = vec![l, r];
        for i in 0..d {
            let mut j = DMatrix::zeros(size, n);
            j.view_mut((n * (i + 1), 0), (n, n)).fill_with_identity();
            factors.push(j);
        }
        let mut terms = vec![Term { u: 0, v: 1, alpha: T::one() }, Term { u: 1, v: 0, alpha: T::one() }];
        for i in 0..d {
            for k in 0..d {
                let a = kinv[(i, k)];
                if a != T::zero() {
                    terms.push(Term { u: 2 + i, v: 2 + k, alpha: -a });
                }
            }
        }
        let mut constant = DMatrix::zeros(size, size);
        constant.view_mut((0, 0), (n, n)).copy_from(bbt);
        Self { n, size, factors, terms, constant }
    }

    fn eval(&self, p: &DMatrix<T>) -> DMatrix<T> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            out += (&self.factors[t.u] * p * self.factors[t.v].transpose()) * t.alpha;
        }
        out
    }

    // Adjoint of the linear part, restricted to symmetric matrices.
    fn adjoint(&self, m: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for t in &self.terms {
            out += (self.factors[t.u].transpose() * m * &self.factors[t.v]) * t.alpha;
        }
        linalg::sym(&out)
    }

    // Cholesky factor of Z = −F(P) when Z ≻ 0.
    fn slack(&self, p: &DMatrix<T>) -> Option<Cholesky<T, nalgebra::Dyn>> {
        let z = -self.eval(p);
        Cholesky::new(linalg::sym(&z))
    }

    fn hessian(&self, w: &DMatrix<T>) -> DMatrix<T> {
        let n = self.n;
        let nf = self.factors.len();
        let wf: Vec<DMatrix<T>> = self.factors.iter().map(|f| w * f).collect();
        // g[a][b] = factors[a]ᵀ W factors[b]
        let mut g = vec![vec![DMatrix::<T>::zeros(0, 0); nf]; nf];
        for a in 0..nf {
            for b in 0..nf {
                g[a][b] = self.factors[a].transpose() * &wf[b];
            }
        }
        let dim = n * (n + 1) / 2;
        let mut h = DMatrix::zeros(dim, dim);
        let r2 = T::c(std::f64::consts::FRAC_1_SQRT_2);
        let mut col = 0;
        let mut m = DMatrix::<T>::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                m.fill(T::zero());
                // E = e_i e_jᵀ (+ e_j e_iᵀ), scaled to unit norm.
                let scale = if i == j { T::one() } else { r2 };
                for s in &self.terms {
                    for t in &self.terms {
                        let coef = s.alpha * t.alpha * scale;
                        let x = &g[s.u][t.u];
                        let y = &g[t.v][s.v];
                        m.ger(coef, &x.column(i), &y.row(j).transpose(), T::one());
                        if i != j {
                            m.ger(coef, &x.column(j), &y.row(i).transpose(), T::one());
                        }
                    }
                }
                h.set_column(col, &svec(&linalg::sym(&m)));
                col += 1;
            }
        }
        linalg::sym(&h)
    }
}

fn barrier_value<T: Scalar>(chol: &Cholesky<T, nalgebra::Dyn>, t: T, trace: T) -> T {
    let logdet = chol.l_dirty().diagonal().iter().fold(T::zero(), |acc, v| acc + v.ln()) * T::c(2.0);
    t * trace - logdet
}

fn solve_newton<T: Scalar>(h: DMatrix<T>, g: &DVector<T>) -> Option<DVector<T>> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Some(-ch.solve(g));
    }
    // Regularise a Hessian that lost definiteness to round-off.
    let scale = h.diagonal().amax().max(tiny());
    for k in [1e-14, 1e-12, 1e-10, 1e-8] {
        let hr = &h + DMatrix::identity(h.nrows(), h.ncols()) * (scale * T::c(k));
        if let Some(ch) = Cholesky::new(hr) {
            return Some(-ch.solve(g));
        }
    }
    h.lu().solve(&(-g))
}

fn tiny<T: Scalar>() -> T {
    T::c(f64::MIN_POSITIVE)
}

/// Runs the barrier method from a strictly feasible `p0`.
pub fn minimize_trace<T: Scalar>(
    a_shift: &DMatrix<T>,
    b: &DMatrix<T>,
    n_mats: &[DMatrix<T>],
    kinv: &DMatrix<T>,
    p0: &DMatrix<T>,
    opts: &BarrierOptions<T>,
) -> Result<BarrierResult<T>> {
    let n = a_shift.nrows();
    // The problem is homogeneous in (P, BBᵀ): scale P to unit average diagonal.
    let scale = (p0.trace() / T::from_usize_lossy(n)).max(tiny());
    let bbt = (b * b.transpose()) / scale;
    let lmi = Lmi::new(a_shift, &bbt, n_mats, kinv);
    let mut p = linalg::sym(&(p0 / scale));
    if lmi.slack(&p).is_none() {
        return Err(Error::Stability("barrier start point is not strictly feasible".into()));
    }
    let ncone = T::from_usize_lossy(lmi.size);
    let tr0 = p.trace();
    let mut t = ncone / tr0;
    let ident = svec(&DMatrix::<T>::identity(n, n));
    let mut outer = 0;
    let mut newton = 0;
    loop {
        outer += 1;
        // Centering.
        loop {
            let chol = lmi.slack(&p).ok_or_else(|| Error::Numerical("barrier iterate left the feasible set".into()))?;
            let w = chol.inverse();
            let grad = &ident * t + svec(&lmi.adjoint(&w));
            let h = lmi.hessian(&w);
            let step = solve_newton(h, &grad).ok_or_else(|| Error::Numerical("singular barrier Hessian".into()))?;
            let dec = -grad.dot(&step);
            if !dec.is_finite() {
                return Err(Error::Numerical("non-finite Newton decrement".into()));
            }
            if dec * T::c(0.5) <= opts.newton_tol {
                break;
            }
            newton += 1;
            if newton > opts.max_newton {
                return Err(Error::Numerical("barrier method exceeded its Newton iteration budget".into()));
            }
            let f0 = barrier_value(&chol, t, p.trace());
            let dp = linalg::smat(&step, n);
            let mut alpha = T::one();
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &p + &dp * alpha;
                if let Some(c) = lmi.slack(&cand) {
                    let f1 = barrier_value(&c, t, cand.trace());
                    if f1 < f0 && f1 <= f0 - T::c(0.01) * alpha * dec {
                        p = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= T::c(0.5);
            }
            if !accepted {
                // No decrease representable in floating point: the iterate is centred.
                break;
            }
        }
        let gap = ncone / t;
        if gap <= opts.rel_gap * p.trace() || gap <= opts.floor_gap * tr0 {
            return Ok(BarrierResult { p: linalg::sym(&p) * scale, outer_iterations: outer, newton_iterations: newton, gap: gap * scale });
        }
        t *= opts.mu;
    }
}

/// Dense block matrix `F(P)` of the LMI (for certificates and tests).
pub fn lmi_matrix<T: Scalar>(
    a_shift: &DMatrix<T>,
    b: &DMatrix<T>,
    n_mats: &[DMatrix<T>],
    kinv: &DMatrix<T>,
    p: &DMatrix<T>,
) -> DMatrix<T> {
    let bbt = b * b.transpose();
    Lmi::new(a_shift, &bbt, n_mats, kinv).eval(p)
}
