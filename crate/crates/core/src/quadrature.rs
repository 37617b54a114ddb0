//! Scalar quadrature for deterministic integrands.

use crate::scalar::Scalar;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<T: Scalar>(f: &dyn Fn(T) -> T, a: T, b: T, tol: T) -> T {
    // Uniform pre-split so oscillatory integrands are resolved before adapting.
    let pieces = 64usize;
    let h = (b - a) / T::from_usize_lossy(pieces);
    let sub_tol = tol / T::from_usize_lossy(pieces);
    let mut total = T::zero();
    for i in 0..pieces {
        let lo = a + h * T::from_usize_lossy(i);
        let hi = if i + 1 == pieces { b } else { lo + h };
        let fa = f(lo);
        let fb = f(hi);
        let m = (lo + hi) * T::c(0.5);
        let fm = f(m);
        let whole = (hi - lo) / T::c(6.0) * (fa + T::c(4.0) * fm + fb);
        total += simpson_rec(f, lo, hi, fa, fm, fb, whole, sub_tol, 50);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<T: Scalar>(f: &dyn Fn(T) -> T, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> T {
    let m = (a + b) * T::c(0.5);
    let lm = (a + m) * T::c(0.5);
    let rm = (m + b) * T::c(0.5);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / T::c(6.0) * (fa + T::c(4.0) * flm + fm);
    let right = (b - m) / T::c(6.0) * (fm + T::c(4.0) * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= T::c(15.0) * tol {
        return left + right + delta / T::c(15.0);
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol * T::c(0.5), depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol * T::c(0.5), depth - 1)
}

/// Trapezoid weights on a uniform grid with `steps` intervals of width `dt`,
/// each multiplied by `e^{c(T − t_j)}`.
pub fn weighted_trapezoid<T: Scalar>(steps: usize, dt: T, c: T) -> Vec<T> {
    let t_end = dt * T::from_usize_lossy(steps);
    (0..=steps)
        .map(|j| {
            let t = dt * T::from_usize_lossy(j);
            let end = if j == 0 || j == steps { T::c(0.5) } else { T::one() };
            end * dt * (c * (t_end - t)).exp()
        })
        .collect()
}
