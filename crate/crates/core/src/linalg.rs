//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves `A X = B` for symmetric positive-definite `A` via Cholesky.
pub fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = diagonal_condition(&a);
    let chol = a
        .cholesky()
        .ok_or(Error::IllConditioned { condition: cond })?;
    Ok(chol.solve(b))
}

/// Cheap condition proxy: ratio of extreme diagonal entries.
fn diagonal_condition(a: &DMatrix<f64>) -> f64 {
    let diag = a.diagonal();
    let max = diag.iter().cloned().fold(f64::MIN, f64::max);
    let min = diag.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `min ||X W - Y||_F^2 + penalty ||W||_F^2`.
///
/// `penalty = 0` returns the minimum-norm least-squares solution. With a
/// positive penalty the primal or dual normal equations are used, whichever
/// is smaller.
pub fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, penalty: f64) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if y.nrows() != n {
        return Err(Error::dim("ridge targets", n, y.nrows()));
    }
    if penalty < 0.0 || !penalty.is_finite() {
        return Err(Error::InvalidInput(format!(
            "ridge penalty must be finite and nonnegative, got {penalty}"
        )));
    }
    if penalty == 0.0 {
        return min_norm_lstsq(x, y);
    }
    if d <= n {
        let mut gram = x.tr_mul(x);
        for i in 0..d {
            gram[(i, i)] += penalty;
        }
        spd_solve(gram, &x.tr_mul(y))
    } else {
        let mut gram = x * x.transpose();
        for i in 0..n {
            gram[(i, i)] += penalty;
        }
        let alpha = spd_solve(gram, y)?;
        Ok(x.tr_mul(&alpha))
    }
}

pub fn min_norm_lstsq(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Ok(DMatrix::zeros(d, y.ncols()));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (n.max(d) as f64) * f64::EPSILON * smax.max(f64::MIN_POSITIVE);
    svd.solve(y, eps)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))
}

/// Symmetric square root of a PSD matrix, clamping eigenvalues below
/// `max(eig) * 1e-12` to zero.
pub fn psd_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(p.clone());
    let max = eig.eigenvalues.max().max(0.0);
    let floor = max * 1e-12;
    let roots = eig
        .eigenvalues
        .map(|v| if v > floor { v.sqrt() } else { 0.0 });
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&roots) * u.transpose()
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_norm(h: &DMatrix<f64>) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // Work on the smaller Gram matrix.
    let gram = if a.nrows() >= a.ncols() {
        a.tr_mul(a)
    } else {
        a * a.transpose()
    };
    symmetric_norm(&gram).sqrt()
}

/// Orthonormal basis for the column span of `cols` by modified Gram-Schmidt
/// with one re-orthogonalization pass. Columns whose residual norm falls
/// below `tol` times their original norm are dropped.
pub fn orthonormal_columns(cols: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let m = cols.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(cols.ncols());
    for c in cols.column_iter() {
        let orig = c.norm();
        if orig == 0.0 {
            continue;
        }
        let mut v = c.clone_owned();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > tol * orig {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(m, 0);
    }
    DMatrix::from_columns(&basis)
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
