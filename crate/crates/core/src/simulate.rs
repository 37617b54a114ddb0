//! Euler–Maruyama ensembles driven by shared correlated Wiener increments.
//!
//! Every path owns a ChaCha stream derived from `(seed, path)`, and paths are
//! processed in fixed-size chunks whose results are combined in chunk order,
//! so output is bit-identical for any number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::balancing::ReducedModel;
use crate::error::{dim, Error, Result};
use crate::linalg;
use crate::lyapunov::{solve_equality, LyapunovOperator};
use crate::model::{ControlSignal, StochasticSystem};
use crate::quadrature::weighted_trapezoid;
use crate::scalar::Scalar;

pub const BLOWUP_THRESHOLD: f64 = 1e8;
/// Paths per work unit.
pub const CHUNK: usize = 64;

/// Coefficients consumed by the time stepper.
pub trait Dynamics<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn a(&self) -> &DMatrix<T>;
    fn b(&self) -> &DMatrix<T>;
    fn c(&self) -> &DMatrix<T>;
    fn noise(&self) -> &[DMatrix<T>];
    fn has_nonlinearity(&self) -> bool;
    /// Writes `f(x)` for every column of `x` into `out`.
    fn nonlinear(&self, x: &DMatrix<T>, out: &mut DMatrix<T>);
}

impl<T: Scalar> Dynamics<T> for StochasticSystem<T> {
    fn dim(&self) -> usize {
        self.n()
    }
    fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    fn c(&self) -> &DMatrix<T> {
        &self.c
    }
    fn noise(&self) -> &[DMatrix<T>] {
        &self.n_mats
    }
    fn has_nonlinearity(&self) -> bool {
        !self.f.is_zero()
    }
    fn nonlinear(&self, x: &DMatrix<T>, out: &mut DMatrix<T>) {
        self.f.eval_columns(x, out);
    }
}

impl<T: Scalar> Dynamics<T> for ReducedModel<T> {
    fn dim(&self) -> usize {
        self.r
    }
    fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    fn c(&self) -> &DMatrix<T> {
        &self.c
    }
    fn noise(&self) -> &[DMatrix<T>] {
        &self.n_mats
    }
    fn has_nonlinearity(&self) -> bool {
        !self.f.is_zero()
    }
    fn nonlinear(&self, x: &DMatrix<T>, out: &mut DMatrix<T>) {
        let mut full = DMatrix::zeros(self.v.nrows(), x.ncols());
        self.eval_nonlinear_columns(x, &mut full, out);
    }
}

/// Seeded source of Wiener increments `ΔM ~ N(0, K dt)`.
#[derive(Debug, Clone)]
pub struct NoiseBundle<T: Scalar> {
    pub dt: T,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    k_sqrt: DMatrix<T>,
}

impl<T: Scalar> NoiseBundle<T> {
    pub fn new(k: &DMatrix<T>, dt: T, n_steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        if !(dt > T::zero()) || n_steps == 0 || n_paths == 0 {
            return Err(Error::Config("noise bundle needs dt > 0, at least one step and one path".into()));
        }
        let tol = T::c(1e-12) * k.norm().max(T::one());
        let k_sqrt = if k.nrows() == 0 { DMatrix::zeros(0, 0) } else { linalg::sqrt_psd(k, tol)? };
        Ok(Self { dt, n_steps, n_paths, seed, k_sqrt })
    }

    /// Grid `T/dt` steps; `T` must be a multiple of `dt` to round-off.
    pub fn for_horizon(k: &DMatrix<T>, t_final: T, dt: T, n_paths: usize, seed: u64) -> Result<Self> {
        let steps = steps_for(t_final, dt)?;
        Self::new(k, dt, steps, n_paths, seed)
    }

    pub fn d(&self) -> usize {
        self.k_sqrt.nrows()
    }

    pub fn t_final(&self) -> T {
        self.dt * T::from_usize_lossy(self.n_steps)
    }

    pub fn with_paths(&self, n_paths: usize) -> Self {
        Self { n_paths, ..self.clone() }
    }

    fn path_rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        rng
    }

    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut DVector<T>, out: &mut [T]) {
        for v in z.iter_mut() {
            let s: f64 = rng.sample(StandardNormal);
            *v = T::c(s);
        }
        let sdt = self.dt.sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.k_sqrt.row(i).dot(&z.transpose()) * sdt;
        }
    }

    /// All increments of one path (`n_steps × d`).
    pub fn increments(&self, path: usize) -> DMatrix<T> {
        let d = self.d();
        let mut rng = self.path_rng(path);
        let mut z = DVector::zeros(d);
        let mut buf = vec![T::zero(); d];
        let mut out = DMatrix::zeros(self.n_steps, d);
        for k in 0..self.n_steps {
            self.draw(&mut rng, &mut z, &mut buf);
            for i in 0..d {
                out[(k, i)] = buf[i];
            }
        }
        out
    }
}

pub(crate) fn steps_for<T: Scalar>(t_final: T, dt: T) -> Result<usize> {
    if !(t_final > T::zero()) || !(dt > T::zero()) {
        return Err(Error::Config("horizon and step size must be positive".into()));
    }
    let ratio = t_final / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > T::c(1e-6) * ratio.max(T::one()) {
        return Err(Error::Config("the step size must divide the horizon".into()));
    }
    steps.to_usize().ok_or_else(|| Error::Config("step count out of range".into()))
}

/// Per-step callback of the lockstep stepper. `states[m]` holds the current
/// states of model `m` for the chunk's paths (one column per path). Dead
/// (diverged) paths are flagged in `alive` and have zeroed states.
pub trait StepObserver<T: Scalar> {
    fn observe(&mut self, step: usize, t: T, states: &[DMatrix<T>], alive: &[bool]);
}

enum NoiseOp<T: Scalar> {
    Diagonal(DVector<T>),
    Dense(DMatrix<T>),
}

fn noise_ops<T: Scalar>(mats: &[DMatrix<T>]) -> Vec<NoiseOp<T>> {
    mats.iter()
        .map(|m| {
            let n = m.nrows();
            let diag = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == T::zero()));
            if diag {
                NoiseOp::Diagonal(m.diagonal())
            } else {
                NoiseOp::Dense(m.clone())
            }
        })
        .collect()
}

/// Outcome of a lockstep run: the chunk observers in path order and the
/// per-path divergence flags.
pub struct LockstepRun<O> {
    pub observers: Vec<O>,
    pub diverged: Vec<bool>,
}

/// Simulates several models on the same increments, calling one observer per
/// chunk of paths at every grid time (including `t = 0`).
pub fn run_lockstep<T, O, F>(
    models: &[&dyn Dynamics<T>],
    u: &ControlSignal<T>,
    noise: &NoiseBundle<T>,
    x0: &[DVector<T>],
    make_observer: F,
) -> Result<LockstepRun<O>>
where
    T: Scalar,
    O: StepObserver<T> + Send,
    F: Fn(usize, usize) -> O + Sync,
{
    if models.len() != x0.len() {
        return Err(dim("one initial state per model is required"));
    }
    for (mdl, x) in models.iter().zip(x0) {
        if x.len() != mdl.dim() {
            return Err(dim(format!("initial state has length {}, model order is {}", x.len(), mdl.dim())));
        }
        if mdl.b().ncols() != u.m() {
            return Err(dim(format!("control has {} channels, model expects {}", u.m(), mdl.b().ncols())));
        }
        if mdl.noise().len() != noise.d() {
            return Err(dim(format!("model has {} noise channels, noise bundle {}", mdl.noise().len(), noise.d())));
        }
    }
    let chunks: Vec<(usize, usize)> = (0..noise.n_paths)
        .step_by(CHUNK)
        .map(|s| (s, CHUNK.min(noise.n_paths - s)))
        .collect();
    let ops: Vec<Vec<NoiseOp<T>>> = models.iter().map(|m| noise_ops(m.noise())).collect();
    let results: Vec<(O, Vec<bool>)> = chunks
        .par_iter()
        .map(|&(first, count)| {
            let mut obs = make_observer(first, count);
            let alive = step_chunk(models, &ops, u, noise, x0, first, count, &mut obs);
            (obs, alive)
        })
        .collect();
    let mut observers = Vec::with_capacity(results.len());
    let mut diverged = Vec::with_capacity(noise.n_paths);
    for (o, alive) in results {
        observers.push(o);
        diverged.extend(alive.iter().map(|a| !a));
    }
    Ok(LockstepRun { observers, diverged })
}

#[allow(clippy::too_many_arguments)]
fn step_chunk<T: Scalar, O: StepObserver<T>>(
    models: &[&dyn Dynamics<T>],
    ops: &[Vec<NoiseOp<T>>],
    u: &ControlSignal<T>,
    noise: &NoiseBundle<T>,
    x0: &[DVector<T>],
    first: usize,
    count: usize,
    obs: &mut O,
) -> Vec<bool> {
    let d = noise.d();
    let dt = noise.dt;
    let blowup = T::c(BLOWUP_THRESHOLD);
    let mut rngs: Vec<ChaCha8Rng> = (first..first + count).map(|p| noise.path_rng(p)).collect();
    let mut states: Vec<DMatrix<T>> = x0
        .iter()
        .map(|x| DMatrix::from_fn(x.len(), count, |i, _| x[i]))
        .collect();
    let mut drift: Vec<DMatrix<T>> = models.iter().map(|m| DMatrix::zeros(m.dim(), count)).collect();
    let mut fx: Vec<DMatrix<T>> = models.iter().map(|m| DMatrix::zeros(m.dim(), count)).collect();
    let mut tmp: Vec<DMatrix<T>> = models.iter().map(|m| DMatrix::zeros(m.dim(), count)).collect();
    let mut dm = DMatrix::<T>::zeros(d, count);
    let mut z = DVector::zeros(d);
    let mut buf = vec![T::zero(); d];
    let mut uvec = DVector::zeros(u.m());
    let mut alive = vec![true; count];
    for step in 0..=noise.n_steps {
        let t = dt * T::from_usize_lossy(step);
        obs.observe(step, t, &states, &alive);
        if step == noise.n_steps {
            break;
        }
        u.eval_into(t, uvec.as_mut_slice());
        for (p, rng) in rngs.iter_mut().enumerate() {
            noise.draw(rng, &mut z, &mut buf);
            for i in 0..d {
                dm[(i, p)] = buf[i];
            }
        }
        for (mi, mdl) in models.iter().enumerate() {
            let x = &mut states[mi];
            let dr = &mut drift[mi];
            dr.gemm(dt, mdl.a(), x, T::zero());
            if u.m() > 0 {
                let bu = mdl.b() * &uvec * dt;
                for mut col in dr.column_iter_mut() {
                    col += &bu;
                }
            }
            if mdl.has_nonlinearity() {
                mdl.nonlinear(x, &mut fx[mi]);
                dr.zip_apply(&fx[mi], |a, b| *a += b * dt);
            }
            for (i, op) in ops[mi].iter().enumerate() {
                match op {
                    NoiseOp::Diagonal(g) => {
                        for p in 0..count {
                            let w = dm[(i, p)];
                            for r in 0..g.len() {
                                dr[(r, p)] += g[r] * x[(r, p)] * w;
                            }
                        }
                    }
                    NoiseOp::Dense(nm) => {
                        let nx = &mut tmp[mi];
                        nx.gemm(T::one(), nm, x, T::zero());
                        for p in 0..count {
                            let w = dm[(i, p)];
                            for r in 0..nx.nrows() {
                                dr[(r, p)] += nx[(r, p)] * w;
                            }
                        }
                    }
                }
            }
            *x += &*dr;
        }
        for p in 0..count {
            if !alive[p] {
                continue;
            }
            let bad = states.iter().any(|x| {
                let c = x.column(p);
                let nrm = c.norm();
                !nrm.is_finite() || nrm > blowup
            });
            if bad {
                alive[p] = false;
                for x in states.iter_mut() {
                    x.column_mut(p).fill(T::zero());
                }
            }
        }
    }
    alive
}

/// Simulated ensemble: outputs at every grid time, optionally states on a
/// strided sub-grid.
#[derive(Debug, Clone)]
pub struct Ensemble<T: Scalar> {
    pub dt: T,
    pub n_steps: usize,
    pub seed: u64,
    pub control: ControlSignal<T>,
    /// Per path: `p × (n_steps + 1)` outputs.
    pub outputs: Vec<DMatrix<T>>,
    /// Per path: `dim × (n_steps / stride + 1)` states, if requested.
    pub states: Option<Vec<DMatrix<T>>>,
    pub state_stride: usize,
    pub diverged: Vec<bool>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn n_paths(&self) -> usize {
        self.outputs.len()
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.n_steps).map(|k| self.dt * T::from_usize_lossy(k)).collect()
    }

    pub fn t_final(&self) -> T {
        self.dt * T::from_usize_lossy(self.n_steps)
    }

    pub fn excluded(&self) -> usize {
        self.diverged.iter().filter(|d| **d).count()
    }

    /// Per-time mean and standard deviation of output channel `ch` over live paths.
    pub fn output_moments(&self, ch: usize) -> (Vec<T>, Vec<T>) {
        let live: Vec<&DMatrix<T>> =
            self.outputs.iter().zip(&self.diverged).filter(|(_, d)| !**d).map(|(o, _)| o).collect();
        let n = T::from_usize_lossy(live.len().max(1));
        let mut mean = vec![T::zero(); self.n_steps + 1];
        let mut sd = vec![T::zero(); self.n_steps + 1];
        for k in 0..=self.n_steps {
            let m = live.iter().fold(T::zero(), |a, o| a + o[(ch, k)]) / n;
            let v = live.iter().fold(T::zero(), |a, o| a + (o[(ch, k)] - m) * (o[(ch, k)] - m));
            mean[k] = m;
            sd[k] = if live.len() > 1 { (v / T::from_usize_lossy(live.len() - 1)).sqrt() } else { T::zero() };
        }
        (mean, sd)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Keep state trajectories (every `stride`-th step).
    pub store_states: bool,
    pub state_stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { store_states: false, state_stride: 1 }
    }
}

struct Recorder<'a, T: Scalar> {
    c: &'a DMatrix<T>,
    outputs: Vec<DMatrix<T>>,
    states: Option<Vec<DMatrix<T>>>,
    stride: usize,
}

impl<T: Scalar> StepObserver<T> for Recorder<'_, T> {
    fn observe(&mut self, step: usize, _t: T, states: &[DMatrix<T>], _alive: &[bool]) {
        let x = &states[0];
        let y = self.c * x;
        for (p, out) in self.outputs.iter_mut().enumerate() {
            out.set_column(step, &y.column(p));
        }
        if step % self.stride == 0 {
            if let Some(st) = &mut self.states {
                for (p, s) in st.iter_mut().enumerate() {
                    s.set_column(step / self.stride, &x.column(p));
                }
            }
        }
    }
}

/// Explicit Euler–Maruyama ensemble of `model` over `[0, T]`.
pub fn simulate<T: Scalar>(
    model: &dyn Dynamics<T>,
    u: &ControlSignal<T>,
    t_final: T,
    noise: &NoiseBundle<T>,
    x0: &DVector<T>,
    opts: &SimOptions,
) -> Result<Ensemble<T>> {
    let steps = steps_for(t_final, noise.dt)?;
    if steps != noise.n_steps {
        return Err(Error::Config(format!(
            "horizon needs {steps} steps but the noise bundle has {}",
            noise.n_steps
        )));
    }
    let stride = opts.state_stride.max(1);
    let p = model.c().nrows();
    let n = model.dim();
    let stored = noise.n_steps / stride + 1;
    let run = run_lockstep(&[model], u, noise, std::slice::from_ref(x0), |_, count| Recorder {
        c: model.c(),
        outputs: vec![DMatrix::zeros(p, noise.n_steps + 1); count],
        states: opts.store_states.then(|| vec![DMatrix::zeros(n, stored); count]),
        stride,
    })?;
    let mut outputs = Vec::with_capacity(noise.n_paths);
    let mut states = opts.store_states.then(|| Vec::with_capacity(noise.n_paths));
    for rec in run.observers {
        outputs.extend(rec.outputs);
        if let (Some(all), Some(s)) = (&mut states, rec.states) {
            all.extend(s);
        }
    }
    Ok(Ensemble {
        dt: noise.dt,
        n_steps: noise.n_steps,
        seed: noise.seed,
        control: u.clone(),
        outputs,
        states,
        state_stride: stride,
        diverged: run.diverged,
    })
}

/// Sample mean and standard error of the live entries of `v`.
pub(crate) fn mean_se<T: Scalar>(v: &[T], diverged: &[bool]) -> (T, T, usize) {
    let live: Vec<T> = v.iter().zip(diverged).filter(|(_, d)| !**d).map(|(x, _)| *x).collect();
    let n = live.len();
    if n == 0 {
        return (T::zero(), T::zero(), 0);
    }
    let nf = T::from_usize_lossy(n);
    let m = live.iter().fold(T::zero(), |a, &x| a + x) / nf;
    if n < 2 {
        return (m, T::zero(), n);
    }
    let var = live.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m)) / T::from_usize_lossy(n - 1);
    (m, (var / nf).sqrt(), n)
}

/// A Monte Carlo norm estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate<T> {
    pub value: T,
    pub se: T,
    pub paths: usize,
}

/// `sqrt(E ∫_0^T ‖y(s)‖² e^{c(T−s)} ds)` from per-path trapezoid sums; the
/// standard error follows from the delta method.
pub fn weighted_l2t_norm<T: Scalar>(outputs: &[DMatrix<T>], diverged: &[bool], dt: T, c: T) -> NormEstimate<T> {
    let steps = outputs.first().map(|o| o.ncols().saturating_sub(1)).unwrap_or(0);
    let w = weighted_trapezoid(steps, dt, c);
    let per_path: Vec<T> = outputs
        .iter()
        .map(|o| o.column_iter().zip(&w).fold(T::zero(), |a, (col, &wk)| a + col.norm_squared() * wk))
        .collect();
    norm_from_integrals(&per_path, diverged)
}

/// Norm estimate from per-path integrals `∫ ‖·‖² e^{c(T−s)} ds`.
pub fn norm_from_integrals<T: Scalar>(per_path: &[T], diverged: &[bool]) -> NormEstimate<T> {
    let (m, se, paths) = mean_se(per_path, diverged);
    let value = m.max(T::zero()).sqrt();
    let se = if value > T::zero() { se / (T::c(2.0) * value) } else { T::zero() };
    NormEstimate { value, se, paths }
}

#[derive(Debug, Clone)]
pub struct DecayEstimate<T> {
    /// Least-squares slope of `log E‖x(t)‖²` over the second half of `[0, T]`.
    pub rate: T,
    /// Batch-means standard error of the slope.
    pub se: T,
    /// `2(c2 − c1) − β` with `β = k_Y / k̄` from the stability certificate.
    pub ceiling: Option<T>,
    pub excluded: usize,
}

struct SquaredNorms<T> {
    values: Vec<Vec<T>>,
}

impl<T: Scalar> StepObserver<T> for SquaredNorms<T> {
    fn observe(&mut self, step: usize, _t: T, states: &[DMatrix<T>], _alive: &[bool]) {
        for (p, col) in states[0].column_iter().enumerate() {
            self.values[p][step] = col.norm_squared();
        }
    }
}

fn ls_slope<T: Scalar>(t: &[T], y: &[T]) -> T {
    let n = T::from_usize_lossy(t.len());
    let mt = t.iter().fold(T::zero(), |a, &v| a + v) / n;
    let my = y.iter().fold(T::zero(), |a, &v| a + v) / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (&ti, &yi) in t.iter().zip(y) {
        sxy += (ti - mt) * (yi - my);
        sxx += (ti - mt) * (ti - mt);
    }
    sxy / sxx
}

/// Fits the mean-square decay rate of the uncontrolled system from `x0`.
pub fn estimate_ms_decay<T: Scalar>(
    sys: &StochasticSystem<T>,
    x0: &DVector<T>,
    t_final: T,
    noise: &NoiseBundle<T>,
    shifts: Option<(T, T)>,
) -> Result<DecayEstimate<T>> {
    let steps = steps_for(t_final, noise.dt)?;
    if steps != noise.n_steps {
        return Err(Error::Config("horizon does not match the noise bundle".into()));
    }
    if steps < 4 {
        return Err(Error::Config("decay fit needs at least four steps".into()));
    }
    let u = ControlSignal::zero(sys.m());
    let run = run_lockstep(&[sys as &dyn Dynamics<T>], &u, noise, std::slice::from_ref(x0), |_, count| {
        SquaredNorms { values: vec![vec![T::zero(); steps + 1]; count] }
    })?;
    let per_path: Vec<Vec<T>> = run.observers.into_iter().flat_map(|o| o.values).collect();
    let live: Vec<&Vec<T>> = per_path.iter().zip(&run.diverged).filter(|(_, d)| !**d).map(|(v, _)| v).collect();
    if live.is_empty() {
        return Err(Error::Divergence("all paths diverged in the decay simulation".into()));
    }
    let start = steps / 2;
    let times: Vec<T> = (start..=steps).map(|k| noise.dt * T::from_usize_lossy(k)).collect();
    let slope_of = |paths: &[&Vec<T>]| -> T {
        let n = T::from_usize_lossy(paths.len());
        let logs: Vec<T> = (start..=steps)
            .map(|k| (paths.iter().fold(T::zero(), |a, v| a + v[k]) / n).max(T::c(f64::MIN_POSITIVE)).ln())
            .collect();
        ls_slope(&times, &logs)
    };
    let rate = slope_of(&live);
    let batches = 20usize.min(live.len());
    let se = if batches >= 2 {
        let size = live.len() / batches;
        let slopes: Vec<T> = (0..batches).map(|b| slope_of(&live[b * size..(b + 1) * size])).collect();
        mean_se(&slopes, &vec![false; batches]).1
    } else {
        T::zero()
    };
    let ceiling = match shifts {
        Some((c1, c2)) => {
            let op = LyapunovOperator::new(sys, c1);
            let n = sys.n();
            let x = solve_equality(&op, &DMatrix::identity(n, n))?;
            let k_y = linalg::min_eig(&-op.apply(&x));
            let k_bar = linalg::max_eig(&x);
            Some(T::c(2.0) * (c2 - c1) - k_y / k_bar)
        }
        None => None,
    };
    Ok(DecayEstimate { rate, se, ceiling, excluded: run.diverged.iter().filter(|d| **d).count() })
}

#[derive(Debug, Clone)]
pub struct IdentityCheckReport<T> {
    pub times: Vec<T>,
    /// Central-difference estimate of `d/dt E[xᵀx]` per check time.
    pub lhs: Vec<T>,
    /// `2E[xᵀa] + Σ E[b_iᵀb_j] k_ij`, window-averaged, per check time.
    pub rhs: Vec<T>,
    /// Euler–Maruyama defect `E|a|² dt` included in `rhs`.
    pub scheme_defect: Vec<T>,
    pub se: Vec<T>,
    pub max_normalized_deviation: T,
    pub passed: bool,
}

struct IdentityObserver<'a, T: Scalar> {
    sys: &'a StochasticSystem<T>,
    u: &'a ControlSignal<T>,
    dt: T,
    centers: &'a [usize],
    half: usize,
    // per check: per path (‖x(t−Δ)‖², ‖x(t+Δ)‖², Σ rhs, Σ defect)
    acc: Vec<Vec<[T; 4]>>,
}

impl<T: Scalar> StepObserver<T> for IdentityObserver<'_, T> {
    fn observe(&mut self, step: usize, t: T, states: &[DMatrix<T>], _alive: &[bool]) {
        let relevant: Vec<usize> = (0..self.centers.len())
            .filter(|&c| step + self.half >= self.centers[c] && step <= self.centers[c] + self.half)
            .collect();
        if relevant.is_empty() {
            return;
        }
        let x = &states[0];
        let uvec = self.u.eval(t);
        let bu = &self.sys.b * uvec;
        let mut a = &self.sys.a * x;
        for mut col in a.column_iter_mut() {
            col += &bu;
        }
        let bs: Vec<DMatrix<T>> = self.sys.n_mats.iter().map(|ni| ni * x).collect();
        let d = bs.len();
        for p in 0..x.ncols() {
            let xp = x.column(p);
            let ap = a.column(p);
            let nsq = xp.norm_squared();
            let mut r = T::c(2.0) * xp.dot(&ap);
            for i in 0..d {
                for j in 0..d {
                    r += bs[i].column(p).dot(&bs[j].column(p)) * self.sys.k[(i, j)];
                }
            }
            let defect = ap.norm_squared() * self.dt;
            for &c in &relevant {
                let ctr = self.centers[c];
                let e = &mut self.acc[c][p];
                if step + self.half == ctr {
                    e[0] = nsq;
                }
                if step == ctr + self.half {
                    e[1] = nsq;
                } else {
                    e[2] += r;
                    e[3] += defect;
                }
            }
        }
    }
}

/// Checks `d/dt E[xᵀx] = 2E[xᵀa] + Σ_{ij} E[b_iᵀ b_j] k_ij` for the linear
/// system `a = Ax + Bu`, `b_i = N_i x` at interior grid times.
///
/// The derivative is a central difference over `±half_window` steps and the
/// right side the matching left-point average, augmented by the explicit
/// scheme's `|a|² dt` defect so the comparison is unbiased at finite `dt`.
pub fn quadratic_form_identity_check<T: Scalar>(
    sys: &StochasticSystem<T>,
    u: &ControlSignal<T>,
    x0: &DVector<T>,
    noise: &NoiseBundle<T>,
    n_checks: usize,
    half_window: usize,
) -> Result<IdentityCheckReport<T>> {
    if !sys.f.is_zero() {
        return Err(Error::Precondition("identity check needs a linear test system".into()));
    }
    let steps = noise.n_steps;
    if half_window == 0 || n_checks == 0 || steps < 2 * half_window + 2 {
        return Err(Error::Config("grid too short for the requested check windows".into()));
    }
    let centers: Vec<usize> = (1..=n_checks)
        .map(|k| k * steps / (n_checks + 1))
        .filter(|&c| c >= half_window && c + half_window <= steps)
        .collect();
    let run = run_lockstep(&[sys as &dyn Dynamics<T>], u, noise, std::slice::from_ref(x0), |_, count| {
        IdentityObserver {
            sys,
            u,
            dt: noise.dt,
            centers: &centers,
            half: half_window,
            acc: vec![vec![[T::zero(); 4]; count]; centers.len()],
        }
    })?;
    let width = T::from_usize_lossy(2 * half_window);
    let span = noise.dt * width;
    let mut report = IdentityCheckReport {
        times: Vec::new(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        scheme_defect: Vec::new(),
        se: Vec::new(),
        max_normalized_deviation: T::zero(),
        passed: true,
    };
    for (c, &ctr) in centers.iter().enumerate() {
        let entries: Vec<[T; 4]> = run.observers.iter().flat_map(|o| o.acc[c].iter().copied()).collect();
        let diff: Vec<T> = entries.iter().map(|e| (e[1] - e[0]) / span - (e[2] + e[3]) / width).collect();
        let lhs: Vec<T> = entries.iter().map(|e| (e[1] - e[0]) / span).collect();
        let rhs: Vec<T> = entries.iter().map(|e| (e[2] + e[3]) / width).collect();
        let defect: Vec<T> = entries.iter().map(|e| e[3] / width).collect();
        let (md, se, _) = mean_se(&diff, &run.diverged);
        let (ml, _, _) = mean_se(&lhs, &run.diverged);
        let (mr, _, _) = mean_se(&rhs, &run.diverged);
        let (mdef, _, _) = mean_se(&defect, &run.diverged);
        let slack = T::c(1e-9) * (T::one() + mr.abs());
        let normalized = md.abs() / (se + slack);
        if md.abs() > T::c(3.0) * se + slack {
            report.passed = false;
        }
        report.max_normalized_deviation = report.max_normalized_deviation.max(normalized);
        report.times.push(noise.dt * T::from_usize_lossy(ctr));
        report.lhs.push(ml);
        report.rhs.push(mr);
        report.scheme_defect.push(mdef);
        report.se.push(se);
    }
    Ok(report)
}
