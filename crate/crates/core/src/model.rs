//! Controlled SDE systems with polynomial one-sided-growth drift and the
//! finite-difference reaction–diffusion family.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim, Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

type CustomFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Built-in drift nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonlinearityKind<T> {
    /// `(1+a)x∘2 − x∘3 − a x`
    F1 { a: T },
    /// `x − x∘3`
    F2,
    /// `x − x‖x‖²`
    F3,
    Zero,
    Custom,
}

/// Evaluable drift nonlinearity together with its declared growth constants.
#[derive(Clone)]
pub struct Nonlinearity<T: Scalar> {
    pub kind: NonlinearityKind<T>,
    /// Monotonicity constant: `⟨x, f(x)⟩ ≤ c_f ‖x‖²`.
    pub c_f: T,
    pub c_lip_minus: Option<T>,
    pub c_lip_plus: Option<T>,
    custom: Option<CustomFn<T>>,
    custom_jacobian0: Option<DMatrix<T>>,
    shift: Option<DVector<T>>,
}

impl<T: Scalar> fmt::Debug for Nonlinearity<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("kind", &self.kind)
            .field("c_f", &self.c_f)
            .field("c_lip_minus", &self.c_lip_minus)
            .field("c_lip_plus", &self.c_lip_plus)
            .field("shifted", &self.shift.is_some())
            .finish()
    }
}

impl<T: Scalar> Nonlinearity<T> {
    pub fn f1(a: T) -> Self {
        let one = T::one();
        Self::builtin(
            NonlinearityKind::F1 { a },
            (a - one) * (a - one) * T::c(0.25),
            Some((a * a - a + one) / T::c(3.0)),
            None,
        )
    }

    pub fn f2() -> Self {
        Self::builtin(NonlinearityKind::F2, T::one(), Some(T::one()), Some(T::one()))
    }

    pub fn f3() -> Self {
        Self::builtin(NonlinearityKind::F3, T::one(), Some(T::one()), Some(T::one()))
    }

    pub fn zero() -> Self {
        Self::builtin(NonlinearityKind::Zero, T::zero(), Some(T::zero()), Some(T::zero()))
    }

    fn builtin(kind: NonlinearityKind<T>, c_f: T, minus: Option<T>, plus: Option<T>) -> Self {
        Self { kind, c_f, c_lip_minus: minus, c_lip_plus: plus, custom: None, custom_jacobian0: None, shift: None }
    }

    /// User-supplied nonlinearity. The constants are taken as declared and
    /// are never inferred.
    pub fn custom<F>(eval: F, c_f: T, c_lip_minus: Option<T>, c_lip_plus: Option<T>) -> Self
    where
        F: Fn(&[T], &mut [T]) + Send + Sync + 'static,
    {
        Self {
            kind: NonlinearityKind::Custom,
            c_f,
            c_lip_minus,
            c_lip_plus,
            custom: Some(Arc::new(eval)),
            custom_jacobian0: None,
            shift: None,
        }
    }

    /// Attaches the Jacobian at the origin of a custom nonlinearity.
    pub fn with_jacobian_at_zero(mut self, j: DMatrix<T>) -> Self {
        self.custom_jacobian0 = Some(j);
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NonlinearityKind::Zero) && self.shift.is_none()
    }

    /// Writes `f(x)` into `out` (both of length n).
    pub fn eval_into(&self, x: &[T], out: &mut [T]) {
        match self.kind {
            NonlinearityKind::F1 { a } => {
                let b = T::one() + a;
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v * (v * (b - v) - a);
                }
            }
            NonlinearityKind::F2 => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v - v * v * v;
                }
            }
            NonlinearityKind::F3 => {
                let s = T::one() - x.iter().fold(T::zero(), |acc, &v| acc + v * v);
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v * s;
                }
            }
            NonlinearityKind::Zero => out.iter_mut().for_each(|o| *o = T::zero()),
            NonlinearityKind::Custom => {
                let f = self.custom.as_ref().expect("custom nonlinearity carries a closure");
                f(x, out);
            }
        }
        if let Some(s) = &self.shift {
            for (o, &v) in out.iter_mut().zip(s.iter()) {
                *o -= v;
            }
        }
    }

    pub fn eval(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(x.len());
        self.eval_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Applies `f` to every column of `x`.
    pub fn eval_columns(&self, x: &DMatrix<T>, out: &mut DMatrix<T>) {
        let n = x.nrows();
        if n == 0 {
            return;
        }
        for (xc, oc) in x.as_slice().chunks(n).zip(out.as_mut_slice().chunks_mut(n)) {
            self.eval_into(xc, oc);
        }
    }

    /// Jacobian at the origin, when known.
    pub fn jacobian_at_zero(&self, n: usize) -> Result<DMatrix<T>> {
        let id = DMatrix::<T>::identity(n, n);
        match self.kind {
            NonlinearityKind::F1 { a } => Ok(id * (-a)),
            NonlinearityKind::F2 | NonlinearityKind::F3 => Ok(id),
            NonlinearityKind::Zero => Ok(DMatrix::zeros(n, n)),
            NonlinearityKind::Custom => match &self.custom_jacobian0 {
                Some(j) if j.nrows() == n && j.ncols() == n => Ok(j.clone()),
                Some(_) => Err(dim("Jacobian at zero has the wrong shape")),
                None => Err(Error::Unsupported("custom nonlinearity has no Jacobian at zero".into())),
            },
        }
    }

    fn shifted_by(mut self, f0: DVector<T>) -> Self {
        self.shift = Some(match self.shift.take() {
            Some(s) => s + f0,
            None => f0,
        });
        self
    }
}

/// Spatial profile of a noise coefficient, `N_i = diag(g_i(ζ_j))`.
#[derive(Clone)]
pub enum NoiseProfile<T: Scalar> {
    /// `4 sin ζ`
    FourSin,
    /// `4 cos ζ`
    FourCos,
    /// `Σ_k c_k ζ^k`
    Polynomial(Vec<T>),
    Custom(Arc<dyn Fn(T) -> T + Send + Sync>),
}

impl<T: Scalar> fmt::Debug for NoiseProfile<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseProfile::FourSin => write!(f, "4sin"),
            NoiseProfile::FourCos => write!(f, "4cos"),
            NoiseProfile::Polynomial(c) => write!(f, "poly{c:?}"),
            NoiseProfile::Custom(_) => write!(f, "custom"),
        }
    }
}

impl<T: Scalar> NoiseProfile<T> {
    pub fn eval(&self, z: T) -> T {
        match self {
            NoiseProfile::FourSin => T::c(4.0) * z.sin(),
            NoiseProfile::FourCos => T::c(4.0) * z.cos(),
            NoiseProfile::Polynomial(c) => c.iter().rev().fold(T::zero(), |acc, &ck| acc * z + ck),
            NoiseProfile::Custom(g) => g(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

/// `dx = [Ax + Bu + f(x)]dt + Σ N_i x dM_i`, `y = Cx`, with `Cov(M(t)) = K t`.
#[derive(Debug, Clone)]
pub struct StochasticSystem<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub n_mats: Vec<DMatrix<T>>,
    pub k: DMatrix<T>,
    pub f: Nonlinearity<T>,
    /// Set when the last input column carries the constant `f(0)` offset.
    pub constant_channel: bool,
}

impl<T: Scalar> StochasticSystem<T> {
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        n_mats: Vec<DMatrix<T>>,
        k: DMatrix<T>,
        f: Nonlinearity<T>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(dim("state dimension must be positive"));
        }
        linalg::dims_square(&a, n, "A")?;
        if b.nrows() != n {
            return Err(dim(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(dim(format!("C has {} columns, expected {n}", c.ncols())));
        }
        let d = n_mats.len();
        linalg::dims_square(&k, d, "K")?;
        for (i, ni) in n_mats.iter().enumerate() {
            linalg::dims_square(ni, n, &format!("N_{}", i + 1))?;
        }
        let knorm = k.norm();
        let tol_psd = T::c(1e-12) * knorm.max(T::one());
        if (&k - k.transpose()).norm() > tol_psd {
            return Err(Error::Config("covariance K is not symmetric".into()));
        }
        if d > 0 && linalg::min_eig(&k) < -tol_psd {
            return Err(Error::Config("covariance K is not positive semidefinite".into()));
        }
        Ok(Self { a, b, c, n_mats, k, f, constant_channel: false })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn d(&self) -> usize {
        self.n_mats.len()
    }

    /// Same coefficients with a different nonlinearity.
    pub fn with_nonlinearity(&self, f: Nonlinearity<T>) -> Self {
        Self { f, ..self.clone() }
    }

    /// Same system with the input matrix replaced (e.g. `B = 0`).
    pub fn with_input(&self, b: DMatrix<T>) -> Result<Self> {
        let mut s = Self::new(self.a.clone(), b, self.c.clone(), self.n_mats.clone(), self.k.clone(), self.f.clone())?;
        s.constant_channel = false;
        Ok(s)
    }
}

/// Builds the finite-difference discretisation of the stochastic
/// reaction–diffusion equation on `(0, L)` with boundary control.
pub fn build_reaction_diffusion<T: Scalar>(
    n: usize,
    length: T,
    f: Nonlinearity<T>,
    g_profiles: &[NoiseProfile<T>],
    k: DMatrix<T>,
    boundary: Boundary,
) -> Result<StochasticSystem<T>> {
    if n < 2 {
        return Err(Error::Config("reaction-diffusion model needs n >= 2".into()));
    }
    if length <= T::zero() {
        return Err(Error::Config("domain length must be positive".into()));
    }
    if k.nrows() != g_profiles.len() || k.ncols() != g_profiles.len() {
        return Err(Error::Config(format!(
            "{} noise profiles but K is {}x{}",
            g_profiles.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    let h = length / T::from_usize_lossy(n + 1);
    let ih2 = T::one() / (h * h);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = T::c(-2.0) * ih2;
        if j + 1 < n {
            a[(j, j + 1)] = ih2;
            a[(j + 1, j)] = ih2;
        }
    }
    let mut b = DMatrix::zeros(n, 2);
    b[(0, 0)] = ih2;
    match boundary {
        Boundary::Dirichlet => b[(n - 1, 1)] = ih2,
        Boundary::Neumann => {
            a[(n - 1, n - 1)] = -ih2;
            b[(n - 1, 1)] = T::one() / h;
        }
    }
    let n_mats = g_profiles
        .iter()
        .map(|g| {
            DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                (1..=n).map(|j| g.eval(h * T::from_usize_lossy(j))),
            ))
        })
        .collect();
    let c = DMatrix::from_element(1, n, T::one() / T::from_usize_lossy(n));
    StochasticSystem::new(a, b, c, n_mats, k, f)
}

/// `A x + B u + f(x)`.
pub fn eval_drift<T: Scalar>(sys: &StochasticSystem<T>, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
    if x.len() != sys.n() {
        return Err(dim(format!("state has length {}, expected {}", x.len(), sys.n())));
    }
    if u.len() != sys.m() {
        return Err(dim(format!("input has length {}, expected {}", u.len(), sys.m())));
    }
    Ok(&sys.a * x + &sys.b * u + sys.f.eval(x))
}

/// Moves a nonzero `f(0)` into an extra input column driven by a constant-one
/// channel, so that the origin becomes an equilibrium of the uncontrolled
/// dynamics.
pub fn normalize_equilibrium<T: Scalar>(sys: &StochasticSystem<T>) -> StochasticSystem<T> {
    let n = sys.n();
    let f0 = sys.f.eval(&DVector::zeros(n));
    if f0.iter().all(|v| *v == T::zero()) {
        return sys.clone();
    }
    let m = sys.m();
    let mut b = DMatrix::zeros(n, m + 1);
    b.view_mut((0, 0), (n, m)).copy_from(&sys.b);
    b.set_column(m, &f0);
    StochasticSystem {
        a: sys.a.clone(),
        b,
        c: sys.c.clone(),
        n_mats: sys.n_mats.clone(),
        k: sys.k.clone(),
        f: sys.f.clone().shifted_by(f0),
        constant_channel: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    /// `[−3 cos 20t, 2 sin 10t]`
    Oscillating,
    /// `[−3 e^{−t}, 2 √t]`
    Smooth,
    Zero,
    Custom,
}

/// Deterministic control input `u(t)`.
#[derive(Clone)]
pub struct ControlSignal<T: Scalar> {
    pub kind: ControlKind,
    m: usize,
    custom: Option<Arc<dyn Fn(T, &mut [T]) + Send + Sync>>,
    constant_channel: bool,
}

impl<T: Scalar> fmt::Debug for ControlSignal<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSignal")
            .field("kind", &self.kind)
            .field("m", &self.m)
            .field("constant_channel", &self.constant_channel)
            .finish()
    }
}

impl<T: Scalar> ControlSignal<T> {
    pub fn oscillating() -> Self {
        Self { kind: ControlKind::Oscillating, m: 2, custom: None, constant_channel: false }
    }

    pub fn smooth() -> Self {
        Self { kind: ControlKind::Smooth, m: 2, custom: None, constant_channel: false }
    }

    pub fn zero(m: usize) -> Self {
        Self { kind: ControlKind::Zero, m, custom: None, constant_channel: false }
    }

    pub fn custom<F>(m: usize, eval: F) -> Self
    where
        F: Fn(T, &mut [T]) + Send + Sync + 'static,
    {
        Self { kind: ControlKind::Custom, m, custom: Some(Arc::new(eval)), constant_channel: false }
    }

    /// Appends a constant-one channel (pairs with [`normalize_equilibrium`]).
    pub fn with_constant_channel(mut self) -> Self {
        if !self.constant_channel {
            self.constant_channel = true;
            self.m += 1;
        }
        self
    }

    /// Matches the channel layout of `sys`.
    pub fn adapted_to(self, sys: &StochasticSystem<T>) -> Self {
        if sys.constant_channel {
            self.with_constant_channel()
        } else {
            self
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            ControlKind::Oscillating => "oscillating",
            ControlKind::Smooth => "smooth",
            ControlKind::Zero => "zero",
            ControlKind::Custom => "custom",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ControlKind::Zero) && !self.constant_channel
    }

    pub fn eval_into(&self, t: T, out: &mut [T]) {
        let base = if self.constant_channel { self.m - 1 } else { self.m };
        match self.kind {
            ControlKind::Oscillating => {
                out[0] = T::c(-3.0) * (T::c(20.0) * t).cos();
                out[1] = T::c(2.0) * (T::c(10.0) * t).sin();
            }
            ControlKind::Smooth => {
                out[0] = T::c(-3.0) * (-t).exp();
                out[1] = T::c(2.0) * t.max(T::zero()).sqrt();
            }
            ControlKind::Zero => out[..base].iter_mut().for_each(|v| *v = T::zero()),
            ControlKind::Custom => (self.custom.as_ref().expect("custom control carries a closure"))(t, &mut out[..base]),
        }
        if self.constant_channel {
            out[base] = T::one();
        }
    }

    pub fn eval(&self, t: T) -> DVector<T> {
        let mut out = DVector::zeros(self.m);
        self.eval_into(t, out.as_mut_slice());
        out
    }

    /// `‖u(t)‖²`.
    pub fn norm_sq(&self, t: T) -> T {
        self.eval(t).norm_squared()
    }
}
