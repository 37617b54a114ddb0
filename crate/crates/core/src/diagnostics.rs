//! Monotonicity and one-sided Lipschitz gaps, the local-maximum criterion,
//! trajectory checks of the average inequalities and energy estimates, and
//! the sampling-based classification of Gramian pairs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim, Error, Result};
use crate::error_bounds::control_energy;
use crate::gramians::{GramianKind, GramianPair};
use crate::linalg;
use crate::model::{ControlSignal, Nonlinearity, StochasticSystem};
use crate::scalar::Scalar;
use crate::simulate::{mean_se, Ensemble};

/// Default sampling box `[-2, 2]ⁿ`.
pub const SCAN_HALF_WIDTH: f64 = 2.0;
/// Samples per global scan used by the classification.
pub const CLASSIFY_SAMPLES: usize = 1_000_000;
const SCAN_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipschitzSign {
    Plus,
    Minus,
}

/// Weight matrix `M` of a gap: `X⁻¹` in inverse mode, `X` otherwise.
#[derive(Debug, Clone)]
pub struct GapMetric<T: Scalar> {
    pub m: DMatrix<T>,
}

impl<T: Scalar> GapMetric<T> {
    pub fn new(x: &DMatrix<T>, inverse_mode: bool) -> Result<Self> {
        if x.nrows() != x.ncols() {
            return Err(dim("gap weight must be square"));
        }
        let m = if inverse_mode { linalg::spd_inverse(x)? } else { linalg::sym(x) };
        Ok(Self { m })
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    /// `⟨x, M(f(x) − c2 x)⟩`.
    pub fn monotonicity(&self, f: &Nonlinearity<T>, x: &DVector<T>, c2: T) -> T {
        let fx = f.eval(x);
        let mx = &self.m * x;
        mx.dot(&fx) - c2 * mx.dot(x)
    }

    /// `⟨x±z, M(f(x)±f(z))⟩ − c2 ‖M^{1/2}(x±z)‖²`.
    pub fn lipschitz(&self, f: &Nonlinearity<T>, sign: LipschitzSign, x: &DVector<T>, z: &DVector<T>, c2: T) -> T {
        let (fx, fz) = (f.eval(x), f.eval(z));
        let (s, fs) = match sign {
            LipschitzSign::Plus => (x + z, fx + fz),
            LipschitzSign::Minus => (x - z, fx - fz),
        };
        let ms = &self.m * &s;
        ms.dot(&fs) - c2 * ms.dot(&s)
    }
}

/// `⟨x, M(f(x) − c2 x)⟩` with `M = X⁻¹` in inverse mode and `M = X` otherwise.
pub fn monotonicity_gap<T: Scalar>(
    f: &Nonlinearity<T>,
    x_mat: &DMatrix<T>,
    inverse_mode: bool,
    x: &DVector<T>,
    c2: T,
) -> Result<T> {
    let g = GapMetric::new(x_mat, inverse_mode)?;
    if x.len() != g.n() {
        return Err(dim("state length does not match the gap weight"));
    }
    Ok(g.monotonicity(f, x, c2))
}

/// One-sided Lipschitz gap of the given sign.
pub fn lipschitz_gap<T: Scalar>(
    f: &Nonlinearity<T>,
    x_mat: &DMatrix<T>,
    inverse_mode: bool,
    sign: LipschitzSign,
    x: &DVector<T>,
    z: &DVector<T>,
    c2: T,
) -> Result<T> {
    let g = GapMetric::new(x_mat, inverse_mode)?;
    if x.len() != g.n() || z.len() != g.n() {
        return Err(dim("state length does not match the gap weight"));
    }
    Ok(g.lipschitz(f, sign, x, z, c2))
}

/// Where a scan evaluated its gap.
#[derive(Debug, Clone, PartialEq)]
pub enum ScanDomain<T> {
    /// Tensor grid with `points` nodes per axis on `[lo, hi]²`.
    Grid { lo: T, hi: T, points: usize },
    /// Uniform samples on `[lo, hi]ⁿ` (pairs of samples for Lipschitz scans).
    Samples { lo: T, hi: T, count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapOutcome {
    NonPositive,
    PositiveSomewhere,
}

#[derive(Debug, Clone)]
pub struct GapReport<T> {
    pub domain: ScanDomain<T>,
    /// Grid coordinates (`2 × points²`), grid mode only.
    pub coords: Option<DMatrix<T>>,
    pub values: Vec<T>,
    pub positive_count: usize,
    pub positive_fraction: T,
    /// Largest positive value, zero when none is positive.
    pub max_positive: T,
    pub min_value: T,
    pub outcome: GapOutcome,
}

impl<T: Scalar> GapReport<T> {
    fn from_values(domain: ScanDomain<T>, coords: Option<DMatrix<T>>, values: Vec<T>) -> Self {
        let positive_count = values.iter().filter(|v| **v > T::zero()).count();
        let max_positive = values.iter().fold(T::zero(), |a, &v| a.max(v));
        let min_value = values.iter().fold(T::zero(), |a, &v| a.min(v));
        let positive_fraction = T::from_usize_lossy(positive_count) / T::from_usize_lossy(values.len().max(1));
        let outcome = if positive_count == 0 { GapOutcome::NonPositive } else { GapOutcome::PositiveSomewhere };
        Self { domain, coords, values, positive_count, positive_fraction, max_positive, min_value, outcome }
    }
}

fn grid_axis<T: Scalar>(lo: T, hi: T, points: usize) -> Vec<T> {
    if points == 1 {
        return vec![(lo + hi) * T::c(0.5)];
    }
    let h = (hi - lo) / T::from_usize_lossy(points - 1);
    (0..points).map(|i| lo + h * T::from_usize_lossy(i)).collect()
}

/// Monotonicity gap on a `points × points` grid over `[lo, hi]²` (n = 2 only).
pub fn monotonicity_grid_scan<T: Scalar>(
    f: &Nonlinearity<T>,
    metric: &GapMetric<T>,
    c2: T,
    lo: T,
    hi: T,
    points: usize,
) -> Result<GapReport<T>> {
    if metric.n() != 2 {
        return Err(Error::Config("grid scans are available for n = 2 only".into()));
    }
    if points == 0 || !(hi >= lo) {
        return Err(Error::Config("grid scan needs at least one point and lo <= hi".into()));
    }
    let axis = grid_axis(lo, hi, points);
    let mut coords = DMatrix::zeros(2, points * points);
    let mut values = Vec::with_capacity(points * points);
    for (i, &a) in axis.iter().enumerate() {
        for (j, &b) in axis.iter().enumerate() {
            let x = DVector::from_vec(vec![a, b]);
            coords[(0, i * points + j)] = a;
            coords[(1, i * points + j)] = b;
            values.push(metric.monotonicity(f, &x, c2));
        }
    }
    Ok(GapReport::from_values(ScanDomain::Grid { lo, hi, points }, Some(coords), values))
}

fn sample_box<T: Scalar>(rng: &mut ChaCha8Rng, lo: T, hi: T, n: usize) -> DVector<T> {
    let (l, h) = (lo.to_f64_lossy(), hi.to_f64_lossy());
    DVector::from_fn(n, |_, _| T::c(rng.random_range(l..=h)))
}

// Chunked so results do not depend on the thread count.
fn sampled<V: Send, G>(count: usize, seed: u64, eval: G) -> Vec<V>
where
    G: Fn(&mut ChaCha8Rng) -> V + Sync,
{
    let chunks = count.div_ceil(SCAN_CHUNK);
    let parts: Vec<Vec<V>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = SCAN_CHUNK.min(count - c * SCAN_CHUNK);
            (0..len).map(|_| eval(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Monotonicity gap at `count` uniform samples of `[lo, hi]ⁿ`.
pub fn monotonicity_sample_scan<T: Scalar>(
    f: &Nonlinearity<T>,
    metric: &GapMetric<T>,
    c2: T,
    lo: T,
    hi: T,
    count: usize,
    seed: u64,
) -> Result<GapReport<T>> {
    if count == 0 || !(hi >= lo) {
        return Err(Error::Config("sample scan needs at least one sample and lo <= hi".into()));
    }
    let n = metric.n();
    let values = sampled(count, seed, |rng| {
        let x = sample_box(rng, lo, hi, n);
        metric.monotonicity(f, &x, c2)
    });
    Ok(GapReport::from_values(ScanDomain::Samples { lo, hi, count, seed }, None, values))
}

/// Lipschitz gap at `count` independent uniform pairs `(x, z)`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_sample_scan<T: Scalar>(
    f: &Nonlinearity<T>,
    metric: &GapMetric<T>,
    sign: LipschitzSign,
    c2: T,
    lo: T,
    hi: T,
    count: usize,
    seed: u64,
) -> Result<GapReport<T>> {
    if count == 0 || !(hi >= lo) {
        return Err(Error::Config("sample scan needs at least one sample and lo <= hi".into()));
    }
    let n = metric.n();
    let values = sampled(count, seed, |rng| {
        let x = sample_box(rng, lo, hi, n);
        let z = sample_box(rng, lo, hi, n);
        metric.lipschitz(f, sign, &x, &z, c2)
    });
    Ok(GapReport::from_values(ScanDomain::Samples { lo, hi, count, seed }, None, values))
}

/// Sampled check of the declared constants of `f` with the Euclidean metric.
#[derive(Debug, Clone)]
pub struct ConstantCheck<T> {
    pub c_f_violations: usize,
    pub minus_violations: Option<usize>,
    pub plus_violations: Option<usize>,
    pub samples: usize,
    /// Largest gap observed per check (`c_f`, minus, plus).
    pub worst: [Option<T>; 3],
}

impl<T> ConstantCheck<T> {
    pub fn all_hold(&self) -> bool {
        self.c_f_violations == 0 && self.minus_violations.unwrap_or(0) == 0 && self.plus_violations.unwrap_or(0) == 0
    }
}

/// Verifies `c_f` and the declared one-sided Lipschitz constants of `f` on
/// `samples` draws from `[−2, 2]ⁿ`. A value counts as a violation when it
/// exceeds round-off of the terms involved.
pub fn check_declared_constants<T: Scalar>(
    f: &Nonlinearity<T>,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<ConstantCheck<T>> {
    if n == 0 || samples == 0 {
        return Err(Error::Config("constant check needs n >= 1 and at least one sample".into()));
    }
    let metric = GapMetric { m: DMatrix::identity(n, n) };
    let (lo, hi) = (-T::c(SCAN_HALF_WIDTH), T::c(SCAN_HALF_WIDTH));
    let tol = T::c(64.0) * T::eps();
    // Gap relative to the size of its quadratic term.
    let count = |vals: &[(T, T)]| -> (usize, T) {
        let v = vals.iter().filter(|(g, s)| *g > tol * (T::one() + *s)).count();
        let w = vals.iter().fold(T::c(f64::NEG_INFINITY), |a, (g, _)| a.max(*g));
        (v, w)
    };
    let mono: Vec<(T, T)> = sampled(samples, seed, |rng| {
        let x = sample_box(rng, lo, hi, n);
        (metric.monotonicity(f, &x, f.c_f), x.norm_squared())
    });
    let (c_f_violations, w0) = count(&mono);
    let lip = |sign: LipschitzSign, c: T, stream: u64| -> (usize, T) {
        let vals: Vec<(T, T)> = sampled(samples, seed.wrapping_add(stream), |rng| {
            let x = sample_box(rng, lo, hi, n);
            let z = sample_box(rng, lo, hi, n);
            let s = match sign {
                LipschitzSign::Plus => (&x + &z).norm_squared(),
                LipschitzSign::Minus => (&x - &z).norm_squared(),
            };
            (metric.lipschitz(f, sign, &x, &z, c), s)
        });
        count(&vals)
    };
    let minus = f.c_lip_minus.map(|c| lip(LipschitzSign::Minus, c, 1));
    let plus = f.c_lip_plus.map(|c| lip(LipschitzSign::Plus, c, 2));
    Ok(ConstantCheck {
        c_f_violations,
        minus_violations: minus.map(|m| m.0),
        plus_violations: plus.map(|p| p.0),
        samples,
        worst: [Some(w0), minus.map(|m| m.1), plus.map(|p| p.1)],
    })
}

/// Local-maximum criterion at the origin: passes iff the Jacobian of `f` at
/// zero is `d·I` and `c̃2 = c2 − d > 0`. Returns `(passes, c̃2)`; for a
/// non-scalar Jacobian `c̃2` uses the largest diagonal entry.
pub fn hessian_local_max_check<T: Scalar>(f: &Nonlinearity<T>, c2: T, n: usize) -> Result<(bool, T)> {
    if n == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let j = f.jacobian_at_zero(n)?;
    let d0 = j[(0, 0)];
    let scale = j.amax().max(T::one());
    let tol = T::c(1e-12) * scale;
    let mut scalar = true;
    let mut dmax = d0;
    for i in 0..n {
        dmax = dmax.max(j[(i, i)]);
        for k in 0..n {
            let target = if i == k { d0 } else { T::zero() };
            if (j[(i, k)] - target).abs() > tol {
                scalar = false;
            }
        }
    }
    let c2_tilde = c2 - dmax;
    Ok((scalar && c2_tilde > T::zero(), c2_tilde))
}

/// Both sides of the averaged inequalities at every stored time.
#[derive(Debug, Clone)]
pub struct AverageCheckReport<T> {
    pub times: Vec<T>,
    /// `E∫_0^t ⟨x, P⁻¹ f(x)⟩ ds`.
    pub lhs_p: Vec<T>,
    /// `c2 E∫_0^t ‖P^{-1/2} x‖² ds`.
    pub rhs_p: Vec<T>,
    pub lhs_q: Vec<T>,
    pub rhs_q: Vec<T>,
    /// Standard errors of `lhs − rhs`.
    pub se_p: Vec<T>,
    pub se_q: Vec<T>,
    /// `lhs ≤ rhs` up to three standard errors.
    pub ok_p: Vec<bool>,
    pub ok_q: Vec<bool>,
    /// Smallest `rhs − lhs` over positive times.
    pub margin_p: T,
    pub margin_q: T,
    pub excluded: usize,
}

impl<T> AverageCheckReport<T> {
    pub fn all_ok(&self) -> bool {
        self.ok_p.iter().chain(&self.ok_q).all(|o| *o)
    }
}

fn stored_states<'a, T: Scalar>(sys: &StochasticSystem<T>, ens: &'a Ensemble<T>) -> Result<&'a [DMatrix<T>]> {
    let states = ens
        .states
        .as_deref()
        .ok_or_else(|| Error::Config("ensemble was simulated without stored states".into()))?;
    if states.iter().any(|s| s.nrows() != sys.n()) {
        return Err(Error::Config("ensemble states do not match the system dimension".into()));
    }
    Ok(states)
}

fn stored_times<T: Scalar>(ens: &Ensemble<T>, cols: usize) -> Vec<T> {
    let h = ens.dt * T::from_usize_lossy(ens.state_stride);
    (0..cols).map(|k| h * T::from_usize_lossy(k)).collect()
}

// Cumulative trapezoid integral of `g` on spacing `h`.
fn cumulative<T: Scalar>(g: &[T], h: T) -> Vec<T> {
    let mut out = Vec::with_capacity(g.len());
    let mut acc = T::zero();
    out.push(acc);
    for k in 1..g.len() {
        acc += (g[k - 1] + g[k]) * h * T::c(0.5);
        out.push(acc);
    }
    out
}

/// Monte Carlo check of the averaged monotonicity inequalities along the
/// stored states of `ens`.
pub fn average_monotonicity_check<T: Scalar>(
    sys: &StochasticSystem<T>,
    pair: &GramianPair<T>,
    ens: &Ensemble<T>,
) -> Result<AverageCheckReport<T>> {
    let states = stored_states(sys, ens)?;
    let cols = states.first().map(|s| s.ncols()).unwrap_or(0);
    let h = ens.dt * T::from_usize_lossy(ens.state_stride);
    let pinv = linalg::spd_inverse(&pair.p)?;
    let q = linalg::sym(&pair.q);
    // Per path, per time: cumulative integrals of ⟨x,Mf⟩ and ⟨x,Mx⟩ for M = P⁻¹, Q.
    let per_path: Vec<[Vec<T>; 4]> = states
        .par_iter()
        .map(|s| {
            let mut fx = DMatrix::zeros(s.nrows(), s.ncols());
            sys.f.eval_columns(s, &mut fx);
            let (ps, qs) = (&pinv * s, &q * s);
            let col = |m: &DMatrix<T>, v: &DMatrix<T>| -> Vec<T> {
                (0..cols).map(|k| m.column(k).dot(&v.column(k))).collect()
            };
            [
                cumulative(&col(&ps, &fx), h),
                cumulative(&col(&ps, s), h),
                cumulative(&col(&qs, &fx), h),
                cumulative(&col(&qs, s), h),
            ]
        })
        .collect();
    let c2 = pair.c2;
    let mut rep = AverageCheckReport {
        times: stored_times(ens, cols),
        lhs_p: Vec::with_capacity(cols),
        rhs_p: Vec::with_capacity(cols),
        lhs_q: Vec::with_capacity(cols),
        rhs_q: Vec::with_capacity(cols),
        se_p: Vec::with_capacity(cols),
        se_q: Vec::with_capacity(cols),
        ok_p: Vec::with_capacity(cols),
        ok_q: Vec::with_capacity(cols),
        margin_p: T::c(f64::INFINITY),
        margin_q: T::c(f64::INFINITY),
        excluded: ens.excluded(),
    };
    let three = T::c(3.0);
    for k in 0..cols {
        let take = |i: usize| -> Vec<T> { per_path.iter().map(|v| v[i][k]).collect() };
        let (lp, _, _) = mean_se(&take(0), &ens.diverged);
        let (np, _, _) = mean_se(&take(1), &ens.diverged);
        let (lq, _, _) = mean_se(&take(2), &ens.diverged);
        let (nq, _, _) = mean_se(&take(3), &ens.diverged);
        let dp: Vec<T> = per_path.iter().map(|v| v[0][k] - c2 * v[1][k]).collect();
        let dq: Vec<T> = per_path.iter().map(|v| v[2][k] - c2 * v[3][k]).collect();
        let (mp, sp, _) = mean_se(&dp, &ens.diverged);
        let (mq, sq, _) = mean_se(&dq, &ens.diverged);
        rep.lhs_p.push(lp);
        rep.rhs_p.push(c2 * np);
        rep.lhs_q.push(lq);
        rep.rhs_q.push(c2 * nq);
        rep.se_p.push(sp);
        rep.se_q.push(sq);
        rep.ok_p.push(mp <= three * sp);
        rep.ok_q.push(mq <= three * sq);
        if k > 0 || cols == 1 {
            rep.margin_p = rep.margin_p.min(-mp);
            rep.margin_q = rep.margin_q.min(-mq);
        }
    }
    Ok(rep)
}

/// One eigen-direction of `P` in the state energy estimate.
#[derive(Debug, Clone)]
pub struct EnergyTerm<T> {
    pub lambda: T,
    /// `sup_t E⟨x(t), p_k⟩²` over stored times.
    pub sup_lhs: T,
    /// Standard error at the maximizing time.
    pub sup_se: T,
    /// `λ_k e^{cT} ‖u‖²_{L²_T}`.
    pub bound: T,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct EnergyReport<T> {
    pub c: T,
    pub control_energy: T,
    pub p_terms: Vec<EnergyTerm<T>>,
    pub times: Vec<T>,
    /// `E∫_0^t ‖y‖² ds`.
    pub q_lhs: Vec<T>,
    /// `2E∫_0^t ⟨Qx, Bu⟩ e^{c(t−s)} ds`.
    pub q_rhs: Vec<T>,
    pub q_se: Vec<T>,
    pub q_ok: Vec<bool>,
    pub excluded: usize,
}

impl<T> EnergyReport<T> {
    pub fn all_ok(&self) -> bool {
        self.p_terms.iter().all(|t| t.ok) && self.q_ok.iter().all(|o| *o)
    }
}

/// Compares trajectory energies with the eigenvalue bounds of `P` and the
/// output-energy bound of `Q`, each up to three standard errors.
pub fn energy_estimate_check<T: Scalar>(
    sys: &StochasticSystem<T>,
    pair: &GramianPair<T>,
    ens: &Ensemble<T>,
    u: &ControlSignal<T>,
) -> Result<EnergyReport<T>> {
    let states = stored_states(sys, ens)?;
    if u.m() != sys.m() {
        return Err(dim("control width does not match B"));
    }
    let cols = states.first().map(|s| s.ncols()).unwrap_or(0);
    let times = stored_times(ens, cols);
    let h = ens.dt * T::from_usize_lossy(ens.state_stride);
    let c = pair.weight_exponent();
    let t_final = times.last().copied().unwrap_or(T::zero());
    let energy = if u.is_zero() || cols < 2 { T::zero() } else { control_energy(u, t_final, T::zero()) };
    let growth = (c * t_final).exp();
    let (lam, vecs) = linalg::sym_eig(&linalg::sym(&pair.p));
    let three = T::c(3.0);

    let coords: Vec<DMatrix<T>> = states.par_iter().map(|s| vecs.transpose() * s).collect();
    let mut p_terms = Vec::with_capacity(sys.n());
    for k in 0..sys.n() {
        let mut best = (T::c(f64::NEG_INFINITY), T::zero());
        for t in 0..cols {
            let v: Vec<T> = coords.iter().map(|x| x[(k, t)] * x[(k, t)]).collect();
            let (m, se, _) = mean_se(&v, &ens.diverged);
            if m > best.0 {
                best = (m, se);
            }
        }
        let bound = lam[k] * growth * energy;
        p_terms.push(EnergyTerm { lambda: lam[k], sup_lhs: best.0, sup_se: best.1, bound, ok: best.0 <= bound + three * best.1 });
    }

    let bu: Vec<DVector<T>> = times.iter().map(|&t| &sys.b * u.eval(t)).collect();
    let q = linalg::sym(&pair.q);
    // e^{c(t−s)} folded in as e^{ct} ∫ g(s) e^{−cs} ds.
    let diffs: Vec<Vec<T>> = states
        .par_iter()
        .map(|s| {
            let y = &sys.c * s;
            let qx = &q * s;
            let ysq: Vec<T> = (0..cols).map(|t| y.column(t).norm_squared()).collect();
            let g: Vec<T> =
                (0..cols).map(|t| T::c(2.0) * qx.column(t).dot(&bu[t]) * (-c * times[t]).exp()).collect();
            let (iy, ig) = (cumulative(&ysq, h), cumulative(&g, h));
            (0..cols).map(|t| iy[t] - ig[t] * (c * times[t]).exp()).collect()
        })
        .collect();
    let ysq_int: Vec<Vec<T>> = states
        .par_iter()
        .map(|s| {
            let y = &sys.c * s;
            cumulative(&(0..cols).map(|t| y.column(t).norm_squared()).collect::<Vec<_>>(), h)
        })
        .collect();
    let mut q_lhs = Vec::with_capacity(cols);
    let mut q_rhs = Vec::with_capacity(cols);
    let mut q_se = Vec::with_capacity(cols);
    let mut q_ok = Vec::with_capacity(cols);
    for t in 0..cols {
        let l: Vec<T> = ysq_int.iter().map(|v| v[t]).collect();
        let d: Vec<T> = diffs.iter().map(|v| v[t]).collect();
        let (ml, _, _) = mean_se(&l, &ens.diverged);
        let (md, sd, _) = mean_se(&d, &ens.diverged);
        q_lhs.push(ml);
        q_rhs.push(ml - md);
        q_se.push(sd);
        q_ok.push(md <= three * sd + T::c(1e-12) * ml.abs());
    }
    Ok(EnergyReport { c, control_energy: energy, p_terms, times, q_lhs, q_rhs, q_se, q_ok, excluded: ens.excluded() })
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifyOptions<T> {
    pub samples: usize,
    pub lipschitz_samples: usize,
    pub lo: T,
    pub hi: T,
    pub seed: u64,
}

impl<T: Scalar> Default for ClassifyOptions<T> {
    fn default() -> Self {
        Self {
            samples: CLASSIFY_SAMPLES,
            lipschitz_samples: CLASSIFY_SAMPLES,
            lo: -T::c(SCAN_HALF_WIDTH),
            hi: T::c(SCAN_HALF_WIDTH),
            seed: 0,
        }
    }
}

/// Summary of a scan without its raw values.
#[derive(Debug, Clone, Copy)]
pub struct ScanSummary<T> {
    pub positive_fraction: T,
    pub max_positive: T,
    pub min_value: T,
    pub outcome: GapOutcome,
}

impl<T: Scalar> From<&GapReport<T>> for ScanSummary<T> {
    fn from(r: &GapReport<T>) -> Self {
        Self { positive_fraction: r.positive_fraction, max_positive: r.max_positive, min_value: r.min_value, outcome: r.outcome }
    }
}

#[derive(Debug, Clone)]
pub struct Classification<T> {
    pub kind: GramianKind,
    /// Sampled `G_{P⁻¹}` and `G_Q`.
    pub global_p: ScanSummary<T>,
    pub global_q: ScanSummary<T>,
    /// Sampled `G⁺_{P⁻¹}` and `G⁻_Q`.
    pub lipschitz_p: ScanSummary<T>,
    pub lipschitz_q: ScanSummary<T>,
    /// Per control id: whether the averaged inequalities held.
    pub average: Vec<(String, bool)>,
}

/// Labels `pair` from sampled gap scans and the averaged checks on
/// `ensembles` (one per control of interest, states stored, zero start).
///
/// Global monotonicity needs both monotonicity scans free of positive
/// values; average monotonicity needs every averaged check to hold on a
/// non-empty control family. A pair that is monotone in either sense and
/// whose Lipschitz scans find no positive gap is labelled one-sided Lipschitz.
pub fn classify<T: Scalar>(
    sys: &StochasticSystem<T>,
    pair: &GramianPair<T>,
    ensembles: &[Ensemble<T>],
    opts: &ClassifyOptions<T>,
) -> Result<Classification<T>> {
    let mp = GapMetric::new(&pair.p, true)?;
    let mq = GapMetric::new(&pair.q, false)?;
    let c2 = pair.c2;
    let f = &sys.f;
    let gp = monotonicity_sample_scan(f, &mp, c2, opts.lo, opts.hi, opts.samples, opts.seed)?;
    let gq = monotonicity_sample_scan(f, &mq, c2, opts.lo, opts.hi, opts.samples, opts.seed.wrapping_add(1))?;
    let lp = lipschitz_sample_scan(
        f,
        &mp,
        LipschitzSign::Plus,
        c2,
        opts.lo,
        opts.hi,
        opts.lipschitz_samples,
        opts.seed.wrapping_add(2),
    )?;
    let lq = lipschitz_sample_scan(
        f,
        &mq,
        LipschitzSign::Minus,
        c2,
        opts.lo,
        opts.hi,
        opts.lipschitz_samples,
        opts.seed.wrapping_add(3),
    )?;
    let average = ensembles
        .iter()
        .map(|e| Ok((e.control.id().to_string(), average_monotonicity_check(sys, pair, e)?.all_ok())))
        .collect::<Result<Vec<_>>>()?;
    let global = gp.outcome == GapOutcome::NonPositive && gq.outcome == GapOutcome::NonPositive;
    let averaged = !average.is_empty() && average.iter().all(|(_, ok)| *ok);
    let lipschitz = lp.outcome == GapOutcome::NonPositive && lq.outcome == GapOutcome::NonPositive;
    let kind = if (global || averaged) && lipschitz {
        GramianKind::OneSidedLipschitz
    } else if global {
        GramianKind::GlobalMonotonicity
    } else if averaged {
        GramianKind::AverageMonotonicity
    } else {
        GramianKind::Unclassified
    };
    Ok(Classification {
        kind,
        global_p: (&gp).into(),
        global_q: (&gq).into(),
        lipschitz_p: (&lp).into(),
        lipschitz_q: (&lq).into(),
        average,
    })
}
