//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used by the pseudoinverse routines.
pub const RCOND: f64 = 1e-12;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        _ => f64::INFINITY,
    }
}

/// Moore–Penrose pseudoinverse, discarding singular values below
/// `rcond · σ_max`.
pub fn pinv(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.max();
    let cutoff = rcond * smax;
    let inv = svd
        .singular_values
        .map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    v_t.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}

/// Minimiser of `‖A x − B‖² / N + λ‖x‖²` for each column of `B`, with
/// `N = rows(A)`, computed through the SVD of `A`.
pub fn ridge_lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let (n, p) = a.shape();
    if n == 0 || p == 0 {
        return DMatrix::zeros(p, b.ncols());
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.max();
    let shrink = ridge * n as f64;
    let factors = svd.singular_values.map(|s| {
        if shrink > 0.0 {
            s / (s * s + shrink)
        } else if s > RCOND * smax && s > 0.0 {
            1.0 / s
        } else {
            0.0
        }
    });
    v_t.transpose() * DMatrix::from_diagonal(&factors) * (u.transpose() * b)
}

/// Solves the symmetric positive semi-definite system `H x = r` in the
/// least-squares sense through a symmetric eigendecomposition.
pub fn solve_psd(h: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    if h.nrows() == 0 {
        return DVector::zeros(0);
    }
    if let Some(chol) = h.clone().cholesky() {
        let x = chol.solve(r);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let eig = h.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let cutoff = RCOND * lmax;
    let qtr = eig.eigenvectors.transpose() * r;
    let scaled = DVector::from_fn(qtr.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l > cutoff && l > 0.0 {
            qtr[i] / l
        } else {
            0.0
        }
    });
    &eig.eigenvectors * scaled
}

/// Column means of a row-per-sample matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_fn(x.ncols(), |c, _| x.column(c).sum() / n)
}

/// Subtracts `mean` from every row.
pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}
