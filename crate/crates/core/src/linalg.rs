//! Small dense linear-algebra helpers shared by the bound and estimator code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative truncation for singular values: `max(rows, cols) * eps * 64`.
pub fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON * 64.0
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

/// Thin SVD through faer.
pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, cols),
        });
    }
    let fa = faer::Mat::<f64>::from_fn(rows, cols, |i, j| a[(i, j)]);
    let d = fa.thin_svd().map_err(|_| Error::NoConvergence {
        iterations: 0,
        context: "singular value decomposition",
    })?;
    let (u, s, v) = (d.U(), d.S().column_vector(), d.V());
    Ok(Svd {
        u: DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, cols, |i, j| v[(j, i)]),
    })
}

/// Moore–Penrose pseudo-inverse through the singular value decomposition.
///
/// Singular values below `rel_tol * sigma_max` are treated as zero. With
/// `rel_tol = None` the threshold is [`default_rel_tol`].
pub fn pinv(a: &DMatrix<f64>, rel_tol: Option<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let tol = rel_tol.unwrap_or_else(|| default_rel_tol(rows, cols));
    let Ok(d) = svd(a) else {
        // non-finite input is the only realistic cause; mirror it
        return DMatrix::from_element(cols, rows, f64::NAN);
    };
    let sigma_max = d.singular_values.max();
    if !(sigma_max > 0.0) {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = tol * sigma_max;
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in d.singular_values.iter().enumerate() {
        if s > cutoff {
            // out += v_i * u_i^T / s
            out += (d.v_t.row(i).transpose() * d.u.column(i).transpose()) / s;
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Kronecker product; block `(m, k)` of the result is `a[(m, k)] * b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for m in 0..ar {
        for k in 0..ac {
            let s = a[(m, k)];
            if s != 0.0 {
                out.view_mut((m * br, k * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major
    DVector::from_column_slice(a.as_slice())
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Orthogonal projector onto the complement of the column space of `a`.
pub fn complement_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::identity(n, n) - a * pinv(a, None)
}

pub(crate) fn ensure_finite_matrix(name: &str, a: &DMatrix<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} contains non-finite entries")))
    }
}

pub(crate) fn ensure_finite_vector(name: &str, a: &DVector<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} contains non-finite entries")))
    }
}

pub(crate) fn ensure_square(context: &'static str, a: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.shape() != (n, n) {
        return Err(Error::dims(context, format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
    }
    Ok(())
}
