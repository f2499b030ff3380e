//! Small dense solvers for the fitting routines: Householder least squares
//! and Cholesky factorization. Problem sizes here are a few hundred at
//! most, so the implementations favor clarity and determinism.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Relative diagonal tolerance below which a triangular factor counts as
/// rank deficient.
pub const RANK_RTOL: f64 = 1e-12;

/// Solves `min ‖A·X − B‖_F` by Householder QR; `A` is `m×n` with `m ≥ n`.
///
/// Fails with [`Error::SingularSystem`] when a diagonal of `R` falls below
/// `RANK_RTOL` times the largest one.
pub fn lstsq(a: &Mat, b: &Mat) -> Result<Mat> {
    let (m, n) = a.shape();
    if b.rows() != m {
        return Err(Error::ShapeMismatch {
            op: "lstsq",
            left_rows: m,
            left_cols: n,
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    if m < n {
        return Err(Error::InvalidParameter {
            name: "lstsq",
            message: format!("underdetermined system: {m} rows < {n} unknowns"),
        });
    }
    let k = b.cols();
    let mut r = a.data().to_vec();
    let mut rhs = b.data().to_vec();

    for col in 0..n {
        // Householder reflector for the column tail r[col.., col].
        let mut sigma = 0.0;
        for i in col..m {
            let v = r[i * n + col];
            sigma += v * v;
        }
        let norm = sigma.sqrt();
        if norm == 0.0 {
            continue; // rank check below reports the zero pivot
        }
        let pivot = r[col * n + col];
        let alpha = if pivot > 0.0 { -norm } else { norm };
        let v0 = pivot - alpha;
        let vtv = v0 * v0 + (sigma - pivot * pivot);
        if vtv == 0.0 {
            continue;
        }
        let mut v = Vec::with_capacity(m - col);
        v.push(v0);
        for i in col + 1..m {
            v.push(r[i * n + col]);
        }
        // Apply H = I - 2vvᵀ/vᵀv to the remaining columns of R and to the rhs.
        for j in col..n {
            let mut s = 0.0;
            for (t, vi) in v.iter().enumerate() {
                s += vi * r[(col + t) * n + j];
            }
            let f = 2.0 * s / vtv;
            for (t, vi) in v.iter().enumerate() {
                r[(col + t) * n + j] -= f * vi;
            }
        }
        for j in 0..k {
            let mut s = 0.0;
            for (t, vi) in v.iter().enumerate() {
                s += vi * rhs[(col + t) * k + j];
            }
            let f = 2.0 * s / vtv;
            for (t, vi) in v.iter().enumerate() {
                rhs[(col + t) * k + j] -= f * vi;
            }
        }
    }

    let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(r[i * n + i].abs()));
    if max_diag == 0.0 {
        return Err(Error::SingularSystem);
    }
    for i in 0..n {
        if r[i * n + i].abs() <= RANK_RTOL * max_diag {
            return Err(Error::SingularSystem);
        }
    }

    // Back-substitution on the upper-triangular leading block.
    let mut x = vec![0.0; n * k];
    for j in 0..k {
        for i in (0..n).rev() {
            let mut s = rhs[i * k + j];
            for l in i + 1..n {
                s -= r[i * n + l] * x[l * k + j];
            }
            x[i * k + j] = s / r[i * n + i];
        }
    }
    Mat::from_vec(n, k, x)
}

/// Ridge-regularized least squares via the augmented system
/// `[A; √ridge·I] X ≈ [B; 0]`.
pub fn ridge_lstsq(a: &Mat, b: &Mat, ridge: f64) -> Result<Mat> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "ridge",
            message: format!("must be >= 0, got {ridge}"),
        });
    }
    if ridge == 0.0 {
        return lstsq(a, b);
    }
    let (m, n) = a.shape();
    let s = ridge.sqrt();
    let aug_a = Mat::from_fn(m + n, n, |i, j| {
        if i < m {
            a.get(i, j)
        } else if i - m == j {
            s
        } else {
            0.0
        }
    })?;
    let aug_b = Mat::from_fn(
        m + n,
        b.cols(),
        |i, j| if i < m { b.get(i, j) } else { 0.0 },
    )?;
    lstsq(&aug_a, &aug_b)
}

/// Solves `S·X = B` for symmetric positive definite `S` by Cholesky.
pub fn cholesky_solve(spd: &Mat, rhs: &Mat) -> Result<Mat> {
    let n = spd.rows();
    if !spd.is_square() {
        return Err(Error::NotSquare {
            op: "cholesky_solve",
            rows: spd.rows(),
            cols: spd.cols(),
        });
    }
    if rhs.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "cholesky_solve",
            left_rows: n,
            left_cols: n,
            right_rows: rhs.rows(),
            right_cols: rhs.cols(),
        });
    }
    let k = rhs.cols();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = spd.get(i, j);
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::SingularSystem);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // Forward then backward substitution, per right-hand-side column.
    let mut x = vec![0.0; n * k];
    for j in 0..k {
        for i in 0..n {
            let mut s = rhs.get(i, j);
            for p in 0..i {
                s -= l[i * n + p] * x[p * k + j];
            }
            x[i * k + j] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i * k + j];
            for p in i + 1..n {
                s -= l[p * n + i] * x[p * k + j];
            }
            x[i * k + j] = s / l[i * n + i];
        }
    }
    Mat::from_vec(n, k, x)
}
