//! Output error of truncated models and its a posteriori bounds: the
//! HSV-tail bound and the gap-augmented bound over the intermediate chain
//! of reduced models.

use nalgebra::{DMatrix, DVector};

use crate::balancing::{truncate, BalancedRealization, ReducedModel, TiePolicy};
use crate::error::{Error, Result};
use crate::gramians::GramianPair;
use crate::linalg;
use crate::model::{ControlSignal, StochasticSystem};
use crate::quadrature::{adaptive_simpson, weighted_trapezoid};
use crate::scalar::Scalar;
use crate::simulate::{mean_se, norm_from_integrals, run_lockstep, Dynamics, NoiseBundle, NormEstimate, StepObserver};

/// `∫_0^T ‖u(s)‖² e^{c(T−s)} ds` by adaptive quadrature.
pub fn control_energy<T: Scalar>(u: &ControlSignal<T>, t_final: T, c: T) -> T {
    let f = |s: T| u.norm_sq(s) * (c * (t_final - s)).exp();
    adaptive_simpson(&f, T::zero(), t_final, T::c(1e-13))
}

/// `2 Σ_{k>r} σ_k · sqrt(∫_0^T ‖u‖² e^{c(T−s)} ds)`.
pub fn classical_bound<T: Scalar>(sigma: &DVector<T>, r: usize, u: &ControlSignal<T>, t_final: T, c: T) -> T {
    let tail = sigma.iter().skip(r).fold(T::zero(), |a, &s| a + s);
    T::c(2.0) * tail * control_energy(u, t_final, c).sqrt()
}

/// One `(r, control)` row of an error table.
#[derive(Debug, Clone)]
pub struct ErrorRow<T> {
    pub r: usize,
    pub control_id: String,
    /// `‖y − y_r‖_{L²_T} / ‖y‖_{L²_T}`.
    pub rel_error: T,
    pub mc_se: T,
    /// Weighted error `sqrt(E∫‖y−y_r‖² e^{c(T−s)}ds)` (absolute).
    pub weighted_error: NormEstimate<T>,
    pub output_norm: NormEstimate<T>,
    /// Classical bound divided by `‖y‖_{L²_T}`.
    pub classical_bound: T,
    /// Gap-augmented bound divided by `‖y‖_{L²_T}`, when requested.
    pub gap_bound: Option<T>,
    /// `rel_error / classical_bound`.
    pub ratio: T,
    pub excluded_paths: usize,
}

#[derive(Debug, Clone)]
pub struct ErrorReport<T> {
    pub rows: Vec<ErrorRow<T>>,
    pub c: T,
    pub c1: T,
    pub c2: T,
    pub seed: u64,
    pub dt: T,
    pub n_paths: usize,
}

// Per path: ∫‖y‖² (plain), ∫‖y‖² weighted, and per reduced model ∫‖y−y_r‖² (plain, weighted).
struct ErrorObserver<'a, T: Scalar> {
    cs: Vec<&'a DMatrix<T>>,
    plain: &'a [T],
    weighted: &'a [T],
    out: Vec<T>,
    out_w: Vec<T>,
    err: Vec<Vec<T>>,
    err_w: Vec<Vec<T>>,
}

impl<T: Scalar> StepObserver<T> for ErrorObserver<'_, T> {
    fn observe(&mut self, step: usize, _t: T, states: &[DMatrix<T>], _alive: &[bool]) {
        let (wp, ww) = (self.plain[step], self.weighted[step]);
        let y = self.cs[0] * &states[0];
        for (p, col) in y.column_iter().enumerate() {
            let v = col.norm_squared();
            self.out[p] += v * wp;
            self.out_w[p] += v * ww;
        }
        for m in 1..states.len() {
            let yr = self.cs[m] * &states[m];
            for p in 0..y.ncols() {
                let v = (y.column(p) - yr.column(p)).norm_squared();
                self.err[m - 1][p] += v * wp;
                self.err_w[m - 1][p] += v * ww;
            }
        }
    }
}

/// Relative error of the ratio estimator `sqrt(mean a / mean b)` by the delta method.
fn ratio_se<T: Scalar>(a: &[T], b: &[T], diverged: &[bool]) -> T {
    let (ma, _, n) = mean_se(a, diverged);
    let (mb, _, _) = mean_se(b, diverged);
    if n < 2 || ma <= T::zero() || mb <= T::zero() {
        return T::zero();
    }
    let z: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x / ma - y / mb).collect();
    let (_, se_z, _) = mean_se(&z, diverged);
    (ma / mb).sqrt() * T::c(0.5) * se_z
}

/// Shared-noise relative errors and bounds for every `(r, control)` pair.
/// The gap-augmented bound is evaluated for the orders listed in `gap_orders`.
pub fn error_table<T: Scalar>(
    sys: &StochasticSystem<T>,
    bal: &BalancedRealization<T>,
    r_list: &[usize],
    controls: &[ControlSignal<T>],
    noise: &NoiseBundle<T>,
    pair: &GramianPair<T>,
    gap_orders: &[usize],
) -> Result<ErrorReport<T>> {
    let (c1, c2) = (pair.c1, pair.c2);
    let c = pair.weight_exponent();
    let t_final = noise.t_final();
    let reduced: Vec<ReducedModel<T>> =
        r_list.iter().map(|&r| truncate(sys, bal, r, TiePolicy::Split)).collect::<Result<_>>()?;
    let plain = weighted_trapezoid(noise.n_steps, noise.dt, T::zero());
    let weighted = weighted_trapezoid(noise.n_steps, noise.dt, c);
    let mut rows = Vec::new();
    for u in controls {
        let mut models: Vec<&dyn Dynamics<T>> = vec![sys];
        let mut x0 = vec![DVector::zeros(sys.n())];
        for rm in &reduced {
            models.push(rm);
            x0.push(DVector::zeros(rm.r));
        }
        let nr = reduced.len();
        let run = run_lockstep(&models, u, noise, &x0, |_, count| ErrorObserver {
            cs: models.iter().map(|m| m.c()).collect(),
            plain: &plain,
            weighted: &weighted,
            out: vec![T::zero(); count],
            out_w: vec![T::zero(); count],
            err: vec![vec![T::zero(); count]; nr],
            err_w: vec![vec![T::zero(); count]; nr],
        })?;
        let excluded = run.diverged.iter().filter(|d| **d).count();
        if excluded == noise.n_paths {
            return Err(Error::Divergence(format!("all paths diverged under control {}", u.id())));
        }
        let out: Vec<T> = run.observers.iter().flat_map(|o| o.out.iter().copied()).collect();
        let out_norm = norm_from_integrals(&out, &run.diverged);
        for (i, rm) in reduced.iter().enumerate() {
            let err: Vec<T> = run.observers.iter().flat_map(|o| o.err[i].iter().copied()).collect();
            let err_w: Vec<T> = run.observers.iter().flat_map(|o| o.err_w[i].iter().copied()).collect();
            let abs = norm_from_integrals(&err, &run.diverged);
            let weighted_error = norm_from_integrals(&err_w, &run.diverged);
            let rel = if out_norm.value > T::zero() { abs.value / out_norm.value } else { T::zero() };
            let se = ratio_se(&err, &out, &run.diverged);
            let cb = classical_bound(&bal.sigma, rm.r, u, t_final, c);
            let cb_rel = if out_norm.value > T::zero() { cb / out_norm.value } else { T::zero() };
            let gap = if gap_orders.contains(&rm.requested_r) && rm.r < sys.n() {
                let g = gap_bound(sys, bal, rm.r, u, noise, pair)?;
                Some(if out_norm.value > T::zero() { g.value / out_norm.value } else { T::zero() })
            } else {
                None
            };
            rows.push(ErrorRow {
                r: rm.r,
                control_id: u.id().to_string(),
                rel_error: rel,
                mc_se: se,
                weighted_error,
                output_norm: out_norm,
                classical_bound: cb_rel,
                gap_bound: gap,
                ratio: if cb_rel > T::zero() { rel / cb_rel } else { T::zero() },
                excluded_paths: excluded,
            });
        }
    }
    Ok(ErrorReport { rows, c, c1, c2, seed: noise.seed, dt: noise.dt, n_paths: noise.n_paths })
}

/// Contribution of removing `σ_k` to the gap-augmented bound.
#[derive(Debug, Clone)]
pub struct GapTerm<T> {
    pub k: usize,
    /// `E∫ G_Q^−(V_k x_k, V_{k−1} x_{k−1}) e^{c(T−s)} ds`
    pub q_gap: T,
    /// `E∫ G_{P⁻¹}^+(V_k x_k, V_{k−1} x_{k−1}) e^{c(T−s)} ds`
    pub p_gap: T,
    /// `2 q_gap + σ_k²(2 p_gap + 4 ∫‖u‖² e^{c(T−s)} ds)` before clipping.
    pub radicand: T,
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct GapBoundReport<T> {
    pub value: T,
    pub terms: Vec<GapTerm<T>>,
    pub clipped: bool,
}

// Pair (k, k−1) gap integrals; models are ordered r, r+1, …, n.
struct GapObserver<'a, T: Scalar> {
    lifts: &'a [Option<DMatrix<T>>],
    f: &'a crate::model::Nonlinearity<T>,
    q: &'a DMatrix<T>,
    pinv: &'a DMatrix<T>,
    c2: T,
    w: &'a [T],
    // [pair][path] -> (q gap, p gap)
    acc: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> StepObserver<T> for GapObserver<'_, T> {
    fn observe(&mut self, step: usize, _t: T, states: &[DMatrix<T>], _alive: &[bool]) {
        let wk = self.w[step];
        let lifted: Vec<DMatrix<T>> = states
            .iter()
            .zip(self.lifts)
            .map(|(x, v)| match v {
                Some(v) => v * x,
                None => x.clone(),
            })
            .collect();
        let fl: Vec<DMatrix<T>> = lifted
            .iter()
            .map(|z| {
                let mut o = DMatrix::zeros(z.nrows(), z.ncols());
                self.f.eval_columns(z, &mut o);
                o
            })
            .collect();
        for pair in 0..lifted.len() - 1 {
            let (z2, z1) = (&lifted[pair], &lifted[pair + 1]);
            let (f2, f1) = (&fl[pair], &fl[pair + 1]);
            let dz = z1 - z2;
            let df = f1 - f2;
            let sz = z1 + z2;
            let sf = f1 + f2;
            let qdz = self.q * &dz;
            let pz = self.pinv * &sz;
            for p in 0..dz.ncols() {
                let gq = qdz.column(p).dot(&df.column(p)) - self.c2 * qdz.column(p).dot(&dz.column(p));
                let gp = pz.column(p).dot(&sf.column(p)) - self.c2 * pz.column(p).dot(&sz.column(p));
                let e = &mut self.acc[pair][p];
                e.0 += gq * wk;
                e.1 += gp * wk;
            }
        }
    }
}

/// Gap-augmented bound: simulates the chain of orders `r, …, n` on shared
/// noise and sums the square-rooted summands over `k = r+1, …, n`.
pub fn gap_bound<T: Scalar>(
    sys: &StochasticSystem<T>,
    bal: &BalancedRealization<T>,
    r: usize,
    u: &ControlSignal<T>,
    noise: &NoiseBundle<T>,
    pair: &GramianPair<T>,
) -> Result<GapBoundReport<T>> {
    let n = sys.n();
    if r == 0 || r >= n {
        return Err(Error::Precondition(format!("gap bound needs 1 <= r < n (r = {r}, n = {n})")));
    }
    let (q, c2) = (&pair.q, pair.c2);
    let c = pair.weight_exponent();
    let pinv = linalg::spd_inverse(&pair.p)?;
    let chain: Vec<ReducedModel<T>> =
        (r..n).map(|k| truncate(sys, bal, k, TiePolicy::Split)).collect::<Result<_>>()?;
    let mut models: Vec<&dyn Dynamics<T>> = chain.iter().map(|m| m as &dyn Dynamics<T>).collect();
    models.push(sys);
    let mut lifts: Vec<Option<DMatrix<T>>> = chain.iter().map(|m| Some(m.v.clone())).collect();
    lifts.push(None);
    let x0: Vec<DVector<T>> = models.iter().map(|m| DVector::zeros(m.dim())).collect();
    let w = weighted_trapezoid(noise.n_steps, noise.dt, c);
    let pairs = n - r;
    let run = run_lockstep(&models, u, noise, &x0, |_, count| GapObserver {
        lifts: &lifts,
        f: &sys.f,
        q,
        pinv: &pinv,
        c2,
        w: &w,
        acc: vec![vec![(T::zero(), T::zero()); count]; pairs],
    })?;
    if run.diverged.iter().any(|d| *d) {
        return Err(Error::Divergence(format!(
            "{} paths diverged in the reduced-model chain of orders {r}..={n}",
            run.diverged.iter().filter(|d| **d).count()
        )));
    }
    let energy = control_energy(u, noise.t_final(), c);
    let mut terms = Vec::with_capacity(pairs);
    let mut value = T::zero();
    let mut clipped_any = false;
    for pair in 0..pairs {
        let k = r + pair + 1;
        let qs: Vec<T> = run.observers.iter().flat_map(|o| o.acc[pair].iter().map(|e| e.0)).collect();
        let ps: Vec<T> = run.observers.iter().flat_map(|o| o.acc[pair].iter().map(|e| e.1)).collect();
        let (q_gap, _, _) = mean_se(&qs, &run.diverged);
        let (p_gap, _, _) = mean_se(&ps, &run.diverged);
        let s2 = bal.sigma[k - 1] * bal.sigma[k - 1];
        let radicand = T::c(2.0) * q_gap + s2 * (T::c(2.0) * p_gap + T::c(4.0) * energy);
        let clipped = radicand < T::zero();
        clipped_any |= clipped;
        value += radicand.max(T::zero()).sqrt();
        terms.push(GapTerm { k, q_gap, p_gap, radicand, clipped });
    }
    Ok(GapBoundReport { value, terms, clipped: clipped_any })
}

#[derive(Debug, Clone)]
pub struct TelescopingReport<T> {
    /// `‖y − y_r‖_{L²_T}`.
    pub lhs: NormEstimate<T>,
    /// `‖y_k − y_{k−1}‖_{L²_T}` for `k = r+1, …, n` (`y_n = y`).
    pub terms: Vec<NormEstimate<T>>,
    pub rhs: T,
    /// Standard error of the right side (errors added in quadrature).
    pub rhs_se: T,
    pub excluded: usize,
}

struct ChainOutputs<'a, T: Scalar> {
    cs: Vec<&'a DMatrix<T>>,
    w: &'a [T],
    // [0] = ‖y_n − y_r‖², [1 + pair] = ‖y_k − y_{k−1}‖²
    acc: Vec<Vec<T>>,
}

impl<T: Scalar> StepObserver<T> for ChainOutputs<'_, T> {
    fn observe(&mut self, step: usize, _t: T, states: &[DMatrix<T>], _alive: &[bool]) {
        let wk = self.w[step];
        let ys: Vec<DMatrix<T>> = states.iter().zip(&self.cs).map(|(x, c)| *c * x).collect();
        let last = ys.len() - 1;
        for p in 0..ys[0].ncols() {
            self.acc[0][p] += (ys[last].column(p) - ys[0].column(p)).norm_squared() * wk;
            for pair in 0..last {
                self.acc[1 + pair][p] += (ys[pair + 1].column(p) - ys[pair].column(p)).norm_squared() * wk;
            }
        }
    }
}

/// Measures both sides of `‖y − y_r‖ ≤ Σ_{k>r} ‖y_k − y_{k−1}‖` on shared noise.
pub fn telescoping_check<T: Scalar>(
    sys: &StochasticSystem<T>,
    bal: &BalancedRealization<T>,
    r: usize,
    u: &ControlSignal<T>,
    noise: &NoiseBundle<T>,
    c: T,
) -> Result<TelescopingReport<T>> {
    let n = sys.n();
    if r == 0 || r >= n {
        return Err(Error::Precondition(format!("telescoping check needs 1 <= r < n (r = {r}, n = {n})")));
    }
    let chain: Vec<ReducedModel<T>> =
        (r..n).map(|k| truncate(sys, bal, k, TiePolicy::Split)).collect::<Result<_>>()?;
    let mut models: Vec<&dyn Dynamics<T>> = chain.iter().map(|m| m as &dyn Dynamics<T>).collect();
    models.push(sys);
    let x0: Vec<DVector<T>> = models.iter().map(|m| DVector::zeros(m.dim())).collect();
    let w = weighted_trapezoid(noise.n_steps, noise.dt, c);
    let run = run_lockstep(&models, u, noise, &x0, |_, count| ChainOutputs {
        cs: models.iter().map(|m| m.c()).collect(),
        w: &w,
        acc: vec![vec![T::zero(); count]; n - r + 1],
    })?;
    let collect = |i: usize| -> Vec<T> { run.observers.iter().flat_map(|o| o.acc[i].iter().copied()).collect() };
    let lhs = norm_from_integrals(&collect(0), &run.diverged);
    let terms: Vec<NormEstimate<T>> = (1..=n - r).map(|i| norm_from_integrals(&collect(i), &run.diverged)).collect();
    let rhs = terms.iter().fold(T::zero(), |a, t| a + t.value);
    let rhs_se = terms.iter().fold(T::zero(), |a, t| a + t.se * t.se).sqrt();
    Ok(TelescopingReport { lhs, terms, rhs, rhs_se, excluded: run.diverged.iter().filter(|d| **d).count() })
}
