//! The flattening convention: a multi-channel input `x ∈ R^{N×M}` becomes a
//! column vector of length `N·M` by enumerating row 1 first, then row 2, and
//! so on. Every lowering in this crate uses this one scheme, which is what
//! lets intermediate results stay column vectors with no re-shuffling
//! between layers.
//!
//! With 0-based indices the convention reads `index(i, k) = i·M + k`; because
//! [`Mat`] stores entries row-major, flattening is a straight copy of the
//! backing slice.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Flat index of entry `(row, col)` in the flattening of an `N×n_cols`
/// matrix (0-based).
pub fn flat_index(row: usize, col: usize, n_cols: usize) -> usize {
    row * n_cols + col
}

/// Column-vector flattening of an `N×M` matrix, with the shape retained.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVec {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FlatVec {
    /// Wraps raw flat data; fails unless `data.len() == n_rows * n_cols`.
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 || data.len() != n_rows * n_cols {
            return Err(Error::InvalidDimensions {
                rows: n_rows,
                cols: n_cols,
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "flat vector entries",
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Flattened length `N·M`; never zero.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Entry of the original matrix at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[flat_index(row, col, self.n_cols)]
    }

    /// The flattening viewed as an `NM×1` matrix.
    pub fn as_column_mat(&self) -> Mat {
        Mat::from_vec(self.len(), 1, self.data.clone()).expect("flat data is finite")
    }

    /// Reinterprets an `NM×1` column matrix as a flattening of shape `(n_rows, n_cols)`.
    pub fn from_column_mat(m: &Mat, n_rows: usize, n_cols: usize) -> Result<Self> {
        if m.cols() != 1 || m.rows() != n_rows * n_cols {
            return Err(Error::InvalidDimensions {
                rows: n_rows,
                cols: n_cols,
                len: m.rows() * m.cols(),
            });
        }
        Self::new(n_rows, n_cols, m.data().to_vec())
    }

    /// Maximum absolute entry.
    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Maximum over entries of `|self - other|`.
    pub fn sup_norm_diff(&self, other: &FlatVec) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context: "flat vector difference",
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Flattens a matrix into its column-vector form.
pub fn flatten(x: &Mat) -> FlatVec {
    FlatVec {
        n_rows: x.rows(),
        n_cols: x.cols(),
        data: x.data().to_vec(),
    }
}

/// Inverse of [`flatten`]; exact round-trip.
pub fn unflatten(v: &FlatVec) -> Mat {
    Mat::from_vec(v.n_rows, v.n_cols, v.data.clone()).expect("flat data is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn rows_enumerate_first() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(flatten(&x).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_entry_is_unchanged() {
        let x = Mat::from_rows(&[vec![7.5]]).unwrap();
        let v = flatten(&x);
        assert_eq!(v.data(), &[7.5]);
        assert_eq!(unflatten(&v), x);
    }

    #[test]
    fn index_convention_matches_enumeration() {
        // 3x4, entry (1, 2) sits after one full row of 4 plus 2: index 6.
        assert_eq!(flat_index(1, 2, 4), 6);
        assert_eq!(flat_index(0, 0, 4), 0);
        assert_eq!(flat_index(2, 3, 4), 11);
    }

    #[test]
    fn round_trip_random_shapes() {
        let mut rng = Rng::new(5);
        for trial in 0..100 {
            let rows = 1 + trial % 7;
            let cols = 1 + (trial / 7) % 9;
            let x = rng.uniform_mat(rows, cols, -10.0, 10.0);
            assert_eq!(unflatten(&flatten(&x)), x);
        }
    }

    #[test]
    fn column_mat_round_trip() {
        let x = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let v = flatten(&x);
        let col = v.as_column_mat();
        assert_eq!(col.shape(), (6, 1));
        let back = FlatVec::from_column_mat(&col, 2, 3).unwrap();
        assert_eq!(back, v);
        assert!(FlatVec::from_column_mat(&col, 3, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn get_matches_matrix_entry(
            rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000,
        ) {
            let x = Rng::new(seed).uniform_mat(rows, cols, -1.0, 1.0);
            let v = flatten(&x);
            for i in 0..rows {
                for k in 0..cols {
                    prop_assert_eq!(v.get(i, k), x.get(i, k));
                }
            }
        }
    }
}
