//! Balancing transformation `S = Σ^{1/2} Uᵀ L_P⁻¹`, Hankel singular values,
//! and Petrov–Galerkin truncation.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Nonlinearity, StochasticSystem};
use crate::scalar::Scalar;

pub const TOL_BAL: f64 = 1e-8;
pub const COND_MAX: f64 = 1e12;
/// HSVs are floored at this multiple of `σ_1`.
pub const HSV_FLOOR: f64 = 1e-14;
/// Relative gap below which `σ_r` and `σ_{r+1}` count as a tie.
pub const SPLIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TiePolicy {
    /// Raise `r` until the cut no longer splits a cluster of near-equal HSVs.
    KeepClusters,
    /// Cut at the requested order and only warn.
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BalanceWarning {
    /// HSV `index` (0-based) was raised to the floor `1e-14 σ_1`.
    HsvFloored { index: usize, value: f64 },
    /// The requested order cuts through a cluster of near-equal HSVs.
    TieSplit { requested: usize, used: usize },
}

#[derive(Debug, Clone)]
pub struct BalanceOptions<T> {
    pub cond_max: T,
    pub hsv_floor: T,
}

impl<T: Scalar> Default for BalanceOptions<T> {
    fn default() -> Self {
        Self { cond_max: T::c(COND_MAX), hsv_floor: T::c(HSV_FLOOR) }
    }
}

#[derive(Debug, Clone)]
pub struct BalancedRealization<T: Scalar> {
    pub s: DMatrix<T>,
    pub s_inv: DMatrix<T>,
    /// Hankel singular values, non-increasing.
    pub sigma: DVector<T>,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub n_mats: Vec<DMatrix<T>>,
    pub warnings: Vec<BalanceWarning>,
}

fn cholesky_with_jitter<T: Scalar>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let ps = linalg::sym(p);
    if let Some(ch) = Cholesky::new(ps.clone()) {
        return Ok(ch.unpack());
    }
    let n = p.nrows();
    let jitter = T::c(1e-12) * ps.trace() / T::from_usize_lossy(n);
    Cholesky::new(ps + DMatrix::identity(n, n) * jitter)
        .map(|c| c.unpack())
        .ok_or_else(|| Error::Conditioning("P is numerically indefinite".into()))
}

fn check_inputs<T: Scalar>(p: &DMatrix<T>, q: &DMatrix<T>, opts: &BalanceOptions<T>) -> Result<()> {
    let n = p.nrows();
    linalg::dims_square(p, n, "P")?;
    linalg::dims_square(q, n, "Q")?;
    let cond = linalg::cond_spd(p);
    if !(cond <= opts.cond_max) {
        return Err(Error::Conditioning(format!("P has condition number {cond:e} above the limit")));
    }
    // Q may be numerically singular (unobservable directions); only
    // indefiniteness beyond round-off is rejected.
    let qe = linalg::sym_eigenvalues(q);
    let qmax = qe[n - 1].abs();
    if qe[0] < -T::c(1e-8) * qmax || qmax == T::zero() {
        return Err(Error::Conditioning("Q is numerically indefinite or zero".into()));
    }
    Ok(())
}

// Eigen-decomposition of L_Pᵀ Q L_P with σ = sqrt|w| sorted descending and floored.
fn spectral<T: Scalar>(
    lp: &DMatrix<T>,
    q: &DMatrix<T>,
    floor_rel: T,
) -> Result<(DVector<T>, DMatrix<T>, Vec<BalanceWarning>)> {
    let n = lp.nrows();
    let m = lp.transpose() * q * lp;
    let (w, u) = linalg::sym_eig(&m);
    let wmax = w[n - 1];
    if !(wmax > T::zero()) {
        return Err(Error::Conditioning("balanced Gramian has no positive eigenvalue".into()));
    }
    if w[0] < -T::c(1e-8) * wmax {
        return Err(Error::Conditioning("L_PᵀQL_P is numerically indefinite".into()));
    }
    // Round-off can leave the smallest eigenvalues with either sign; their
    // magnitude is what keeps the transformed Gramians consistent.
    let mut order: Vec<(T, usize)> = (0..n).map(|i| (w[i].abs().sqrt(), i)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let s1 = order[0].0;
    let floor = floor_rel * s1;
    let mut warnings = Vec::new();
    let mut sigma = DVector::zeros(n);
    let mut uo = DMatrix::zeros(n, n);
    for (k, &(s, i)) in order.iter().enumerate() {
        sigma[k] = if s < floor {
            warnings.push(BalanceWarning::HsvFloored { index: k, value: s.to_f64_lossy() });
            log::warn!("Hankel singular value {k} below floor; transformation is near-singular");
            floor
        } else {
            s
        };
        uo.set_column(k, &u.column(i));
    }
    Ok((sigma, uo, warnings))
}

/// Hankel singular values `sqrt(λ(L_Pᵀ Q L_P))`, non-increasing.
pub fn hankel_singular_values<T: Scalar>(p: &DMatrix<T>, q: &DMatrix<T>) -> Result<DVector<T>> {
    let opts = BalanceOptions::default();
    check_inputs(p, q, &opts)?;
    let lp = cholesky_with_jitter(p)?;
    Ok(spectral(&lp, q, opts.hsv_floor)?.0)
}

/// Balancing transformation and balanced coefficients of `sys`.
pub fn balance<T: Scalar>(sys: &StochasticSystem<T>, p: &DMatrix<T>, q: &DMatrix<T>) -> Result<BalancedRealization<T>> {
    balance_with(sys, p, q, &BalanceOptions::default())
}

pub fn balance_with<T: Scalar>(
    sys: &StochasticSystem<T>,
    p: &DMatrix<T>,
    q: &DMatrix<T>,
    opts: &BalanceOptions<T>,
) -> Result<BalancedRealization<T>> {
    let n = sys.n();
    linalg::dims_square(p, n, "P")?;
    check_inputs(p, q, opts)?;
    let lp = cholesky_with_jitter(p)?;
    let (sigma, u, warnings) = spectral(&lp, q, opts.hsv_floor)?;
    let half = sigma.map(|s| s.sqrt());
    // S = Σ^{1/2} Uᵀ L_P⁻¹, via a triangular solve: Sᵀ = L_P⁻ᵀ U Σ^{1/2}.
    let uh = &u * DMatrix::from_diagonal(&half);
    let st = lp
        .transpose()
        .solve_upper_triangular(&uh)
        .ok_or_else(|| Error::Conditioning("Cholesky factor of P is singular".into()))?;
    let s = st.transpose();
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("balancing transformation is singular".into()))?;
    let a = &s * &sys.a * &s_inv;
    let b = &s * &sys.b;
    let c = &sys.c * &s_inv;
    let n_mats = sys.n_mats.iter().map(|ni| &s * ni * &s_inv).collect();
    Ok(BalancedRealization { s, s_inv, sigma, a, b, c, n_mats, warnings })
}

impl<T: Scalar> BalancedRealization<T> {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    /// `2 Σ_{k>r} σ_k`.
    pub fn tail_sum(&self, r: usize) -> T {
        self.sigma.iter().skip(r).fold(T::zero(), |acc, &s| acc + s) * T::c(2.0)
    }

    /// Order actually used for a requested `r` under `policy`.
    pub fn effective_order(&self, r: usize, policy: TiePolicy) -> usize {
        let n = self.n();
        let mut r = r;
        if policy == TiePolicy::KeepClusters {
            while r < n && r > 0 && is_tie(self.sigma[r - 1], self.sigma[r]) {
                r += 1;
            }
        }
        r
    }
}

fn is_tie<T: Scalar>(a: T, b: T) -> bool {
    (a - b).abs() <= T::c(SPLIT_TOL) * a.abs()
}

/// Reduced model of order `r`: `A_r = WᵀAV` etc., `f_r(x) = Wᵀ f(V x)`.
#[derive(Debug, Clone)]
pub struct ReducedModel<T: Scalar> {
    pub r: usize,
    pub requested_r: usize,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub n_mats: Vec<DMatrix<T>>,
    /// Trial basis (first `r` columns of `S⁻¹`).
    pub v: DMatrix<T>,
    /// Test basis (first `r` columns of `Sᵀ`).
    pub w: DMatrix<T>,
    pub f: Nonlinearity<T>,
    pub warnings: Vec<BalanceWarning>,
}

impl<T: Scalar> ReducedModel<T> {
    /// `Wᵀ f(V x_r)` for each column of `x` (r × paths).
    pub fn eval_nonlinear_columns(&self, x: &DMatrix<T>, full: &mut DMatrix<T>, out: &mut DMatrix<T>) {
        let lifted = &self.v * x;
        self.f.eval_columns(&lifted, full);
        out.gemm_tr(T::one(), &self.w, full, T::zero());
    }

    pub fn eval_nonlinear(&self, x: &DVector<T>) -> DVector<T> {
        self.w.transpose() * self.f.eval(&(&self.v * x))
    }

    /// Projects a full initial state: `x_r(0) = Wᵀ x(0)`.
    pub fn project_state(&self, x0: &DVector<T>) -> DVector<T> {
        self.w.transpose() * x0
    }
}

/// Truncates the balanced realization to order `r` (adjusted upwards under
/// [`TiePolicy::KeepClusters`] when the cut would split near-equal HSVs).
pub fn truncate<T: Scalar>(
    sys: &StochasticSystem<T>,
    bal: &BalancedRealization<T>,
    r: usize,
    policy: TiePolicy,
) -> Result<ReducedModel<T>> {
    let n = bal.n();
    if n != sys.n() {
        return Err(crate::error::dim("balanced realization does not match the system"));
    }
    if r == 0 || r > n {
        return Err(Error::Precondition(format!("truncation order {r} outside 1..={n}")));
    }
    let mut warnings = Vec::new();
    let used = bal.effective_order(r, policy);
    if r < n && is_tie(bal.sigma[r - 1], bal.sigma[r]) {
        warnings.push(BalanceWarning::TieSplit { requested: r, used });
        log::warn!("order {r} splits near-equal Hankel singular values; using order {used}");
    }
    let v = bal.s_inv.columns(0, used).into_owned();
    let w = bal.s.rows(0, used).transpose();
    let wt = w.transpose();
    Ok(ReducedModel {
        r: used,
        requested_r: r,
        a: &wt * &sys.a * &v,
        b: &wt * &sys.b,
        c: &sys.c * &v,
        n_mats: sys.n_mats.iter().map(|ni| &wt * ni * &v).collect(),
        v,
        w,
        f: sys.f.clone(),
        warnings,
    })
}
