//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric part `(X + Xᵀ)/2`.
pub fn sym<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    (x + x.transpose()) * T::c(0.5)
}

/// Frobenius norm of `X - Xᵀ` relative to `‖X‖_F`.
pub fn asymmetry<T: Scalar>(x: &DMatrix<T>) -> T {
    let nrm = x.norm();
    if nrm == T::zero() {
        return T::zero();
    }
    (x - x.transpose()).norm() / nrm
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
pub fn sym_eig<T: Scalar>(x: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let eig = SymmetricEigen::new(sym(x));
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn sym_eigenvalues<T: Scalar>(x: &DMatrix<T>) -> DVector<T> {
    let mut v: Vec<T> = sym(x).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    DVector::from_vec(v)
}

pub fn min_eig<T: Scalar>(x: &DMatrix<T>) -> T {
    sym_eigenvalues(x)[0]
}

pub fn max_eig<T: Scalar>(x: &DMatrix<T>) -> T {
    let v = sym_eigenvalues(x);
    v[v.len() - 1]
}

/// Kronecker product.
pub fn kron<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues in
/// `[-tol, 0)` are clipped to zero; anything more negative is an error.
pub fn sqrt_psd<T: Scalar>(k: &DMatrix<T>, tol: T) -> Result<DMatrix<T>> {
    let (vals, vecs) = sym_eig(k);
    let mut d = DVector::zeros(vals.len());
    for i in 0..vals.len() {
        if vals[i] < -tol {
            return Err(Error::Config(format!(
                "matrix is not positive semidefinite (eigenvalue {})",
                vals[i]
            )));
        }
        d[i] = vals[i].max(T::zero()).sqrt();
    }
    Ok(&vecs * DMatrix::from_diagonal(&d) * vecs.transpose())
}

/// Spectral condition number of a symmetric positive definite matrix
/// (infinite when the smallest eigenvalue is not positive).
pub fn cond_spd<T: Scalar>(x: &DMatrix<T>) -> T {
    let v = sym_eigenvalues(x);
    let lo = v[0];
    let hi = v[v.len() - 1];
    if lo <= T::zero() {
        T::max_value().unwrap_or(T::c(f64::MAX))
    } else {
        hi / lo
    }
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse<T: Scalar>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    let ch = Cholesky::new(sym(x))
        .ok_or_else(|| Error::Conditioning("matrix is not numerically positive definite".into()))?;
    Ok(sym(&ch.inverse()))
}

/// Largest real part of the eigenvalues of a general square matrix.
pub fn max_real_eig<T: Scalar>(x: &DMatrix<T>) -> Result<T> {
    let n = x.nrows();
    let schur = Schur::try_new(x.clone(), T::eps(), 10_000 * n.max(1))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    let blocks = schur_blocks(&t);
    let mut best = T::min_value().unwrap_or(T::c(f64::MIN));
    for (s, p) in blocks {
        // The real part of a 2x2 block's eigenvalue pair is half its trace.
        let re = if p == 1 { t[(s, s)] } else { (t[(s, s)] + t[(s + 1, s + 1)]) * T::c(0.5) };
        if p == 2 {
            // Blocks with real eigenvalues can survive when the iteration does
            // not split them; take the larger one explicitly.
            let (a, b, c, d) = (t[(s, s)], t[(s, s + 1)], t[(s + 1, s)], t[(s + 1, s + 1)]);
            let disc = (a - d) * (a - d) * T::c(0.25) + b * c;
            if disc >= T::zero() {
                best = best.max(re + disc.sqrt());
                continue;
            }
        }
        best = best.max(re);
    }
    Ok(best)
}

/// Diagonal block structure `(start, size)` of a real quasi-triangular Schur factor.
pub(crate) fn schur_blocks<T: Scalar>(t: &DMatrix<T>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = t[(i + 1, i)].abs();
            let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if sub > T::eps() * scale {
                out.push((i, 2));
                i += 2;
                continue;
            }
        }
        out.push((i, 1));
        i += 1;
    }
    out
}

/// Bartels–Stewart solver for `AᵀX + XA = C` with a fixed `A`.
///
/// The real Schur form of `A` is computed once, so repeated solves with
/// different right-hand sides cost O(n³) each without refactoring.
#[derive(Debug, Clone)]
pub struct LyapunovSchur<T: Scalar> {
    u: DMatrix<T>,
    t: DMatrix<T>,
    blocks: Vec<(usize, usize)>,
}

impl<T: Scalar> LyapunovSchur<T> {
    pub fn new(a: &DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(crate::error::dim("Lyapunov coefficient must be square"));
        }
        let schur = Schur::try_new(a.clone(), T::eps(), 10_000 * n.max(1))
            .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
        let (u, t) = schur.unpack();
        let blocks = schur_blocks(&t);
        Ok(Self { u, t, blocks })
    }

    /// Largest real part among the eigenvalues of `A`.
    pub fn abscissa(&self) -> T {
        let mut best = T::min_value().unwrap_or(T::c(f64::MIN));
        for &(s, p) in &self.blocks {
            let re = if p == 1 { self.t[(s, s)] } else { (self.t[(s, s)] + self.t[(s + 1, s + 1)]) * T::c(0.5) };
            best = best.max(re);
        }
        best
    }

    /// Solves `AᵀX + XA = C`.
    pub fn solve(&self, c: &DMatrix<T>) -> Result<DMatrix<T>> {
        let n = self.t.nrows();
        if c.nrows() != n || c.ncols() != n {
            return Err(crate::error::dim("right-hand side has wrong shape"));
        }
        let t = &self.t;
        // With A = U T Uᵀ the equation becomes Tᵀ Y + Y T = Uᵀ C U.
        let ct = self.u.transpose() * c * &self.u;
        let mut y = DMatrix::<T>::zeros(n, n);
        for &(sk, p) in &self.blocks {
            for &(sl, q) in &self.blocks {
                let mut rhs: DMatrix<T> = ct.view((sk, sl), (p, q)).into_owned();
                if sk > 0 {
                    rhs -= t.view((0, sk), (sk, p)).transpose() * y.view((0, sl), (sk, q));
                }
                if sl > 0 {
                    rhs -= y.view((sk, 0), (p, sl)) * t.view((0, sl), (sl, q));
                }
                let tkk = t.view((sk, sk), (p, p)).into_owned();
                let tll = t.view((sl, sl), (q, q)).into_owned();
                let blk = small_sylvester(&tkk, &tll, &rhs)?;
                y.view_mut((sk, sl), (p, q)).copy_from(&blk);
            }
        }
        Ok(&self.u * y * self.u.transpose())
    }
}

// Solves Tkkᵀ Y + Y Tll = R for blocks of size at most two.
fn small_sylvester<T: Scalar>(tkk: &DMatrix<T>, tll: &DMatrix<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let p = tkk.nrows();
    let q = tll.nrows();
    if p == 1 && q == 1 {
        let den = tkk[(0, 0)] + tll[(0, 0)];
        if den.abs() <= T::eps() * (tkk[(0, 0)].abs() + tll[(0, 0)].abs()) {
            return Err(Error::Stability("Lyapunov operator is singular (eigenvalues sum to zero)".into()));
        }
        return Ok(DMatrix::from_element(1, 1, r[(0, 0)] / den));
    }
    let ip = DMatrix::<T>::identity(p, p);
    let iq = DMatrix::<T>::identity(q, q);
    let m = iq.kronecker(&tkk.transpose()) + tll.transpose().kronecker(&ip);
    let rhs = DVector::from_column_slice(r.as_slice());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Stability("Lyapunov operator is singular (eigenvalues sum to zero)".into()))?;
    Ok(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

/// `n(n+1)/2` coordinates of a symmetric matrix in the orthonormal basis
/// `{E_ii} ∪ {(E_ij + E_ji)/√2}`; the trace inner product becomes Euclidean.
pub fn svec<T: Scalar>(x: &DMatrix<T>) -> DVector<T> {
    let n = x.nrows();
    let r2 = T::c(std::f64::consts::SQRT_2);
    let mut out = DVector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j { x[(i, i)] } else { (x[(i, j)] + x[(j, i)]) * T::c(0.5) * r2 };
            k += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat<T: Scalar>(v: &DVector<T>, n: usize) -> DMatrix<T> {
    let r2 = T::c(std::f64::consts::SQRT_2);
    let mut x = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                x[(i, i)] = v[k];
            } else {
                let e = v[k] / r2;
                x[(i, j)] = e;
                x[(j, i)] = e;
            }
            k += 1;
        }
    }
    x
}

pub(crate) fn dims_square<T: Scalar>(x: &DMatrix<T>, n: usize, what: &str) -> Result<()> {
    if x.nrows() != n || x.ncols() != n {
        return Err(crate::error::dim(format!(
            "{what}: expected {n}x{n}, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}
