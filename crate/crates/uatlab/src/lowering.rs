//! Lowering: materializing a sublayer as one explicit `NM×NM` matrix acting
//! on the flattened input.
//!
//! Under the row-first flattening of [`crate::flatten`], the linear sublayer
//! `x ↦ Wx` becomes the Kronecker operator `W ⊗ I_M`, and a multi-head
//! attention layer becomes
//!
//! ```text
//! M_eff = (I_N ⊗ W_Oᵀ) · Σᵢ Sᵢᵀ (Hᵢ ⊗ W_Vᵢᵀ) Sᵢ
//! ```
//!
//! where `Hᵢ` is the (input-dependent) attention matrix of head `i` and
//! `Sᵢ` selects that head's feature columns out of the full flattening. The
//! operators are stored in standard orientation (`output = matrix · x'`);
//! the equivalent column-sum orientation used with the diamond product is
//! the transpose, available via [`LoweredOp::diamond_weights`].
//!
//! Operators are materialized densely on purpose: the point is inspection
//! and verification, not speed, so sizes are capped at
//! [`MAX_LOWERED_SIZE`].

use crate::error::{Error, Result};
use crate::flatten::FlatVec;
use crate::mat::Mat;
use crate::transformer::{softmax_scores, AttnConfig, MhaParams};

/// Largest flattened length `N·M` a lowering will materialize.
pub const MAX_LOWERED_SIZE: usize = 4096;

/// What kind of sublayer a lowered operator came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Linear,
    Mha,
    Composed,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Linear => "linear",
            OpKind::Mha => "mha",
            OpKind::Composed => "composed",
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An explicit `NM×NM` operator equivalent to a sublayer under flattening.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredOp {
    kind: OpKind,
    n_rows: usize,
    n_cols: usize,
    matrix: Mat,
    nnz: usize,
}

impl LoweredOp {
    /// Wraps a square matrix as a lowered operator for shape `(n_rows, n_cols)`.
    pub fn from_matrix(kind: OpKind, n_rows: usize, n_cols: usize, matrix: Mat) -> Result<Self> {
        let size = n_rows * n_cols;
        check_size(size)?;
        if matrix.shape() != (size, size) {
            return Err(Error::InvalidDimensions {
                rows: matrix.rows(),
                cols: matrix.cols(),
                len: size * size,
            });
        }
        let nnz = matrix.count_nonzero();
        Ok(Self {
            kind,
            n_rows,
            n_cols,
            matrix,
            nnz,
        })
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    /// Row count `N` of the unflattened input/output.
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Column count `M` of the unflattened input/output.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Flattened size `N·M`.
    pub fn size(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Count of entries with `|entry| > 0`.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// `nnz / (NM)²`.
    pub fn density(&self) -> f64 {
        let size = self.size() as f64;
        self.nnz as f64 / (size * size)
    }

    /// The operator in standard orientation: `output = matrix · x'`.
    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    /// The column-sum orientation `W' = matrixᵀ`, for use with the diamond
    /// product: `diamond(W', x') == matrix · x'`.
    pub fn diamond_weights(&self) -> Mat {
        self.matrix.transpose()
    }

    /// Applies the operator to a flattened input of the matching shape.
    pub fn apply(&self, x: &FlatVec) -> Result<FlatVec> {
        if x.n_rows() != self.n_rows || x.n_cols() != self.n_cols {
            return Err(Error::ShapeMismatch {
                op: "lowered apply",
                left_rows: self.n_rows,
                left_cols: self.n_cols,
                right_rows: x.n_rows(),
                right_cols: x.n_cols(),
            });
        }
        let size = self.size();
        let m = self.matrix.data();
        let v = x.data();
        let mut out = vec![0.0; size];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &m[i * size..(i + 1) * size];
            *o = row.iter().zip(v).map(|(&a, &b)| a * b).sum();
        }
        FlatVec::new(self.n_rows, self.n_cols, out)
    }
}

fn check_size(size: usize) -> Result<()> {
    if size > MAX_LOWERED_SIZE {
        return Err(Error::SizeLimit {
            size,
            limit: MAX_LOWERED_SIZE,
        });
    }
    Ok(())
}

/// Lowers the linear sublayer `x ↦ Wx` on inputs with `n_cols` columns.
///
/// Returns the operator `W ⊗ I_M` so that `apply(flatten(x)) = flatten(Wx)`.
/// For a `W` with no zero entries the operator has exactly `N²·M` nonzeros,
/// a density of `1/M`.
pub fn lower_linear(w: &Mat, n_cols: usize) -> Result<LoweredOp> {
    if !w.is_square() {
        return Err(Error::NotSquare {
            op: "lower_linear",
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    if n_cols == 0 {
        return Err(Error::InvalidParameter {
            name: "n_cols",
            message: "input must have at least one column".to_string(),
        });
    }
    check_size(w.rows() * n_cols)?;
    let matrix = w.kron(&Mat::identity(n_cols));
    LoweredOp::from_matrix(OpKind::Linear, w.rows(), n_cols, matrix)
}

/// Flat indices selecting head `head` (1-based) out of the full flattening.
///
/// The indices are listed in the head's own row-major order, so gathering
/// them from `flatten(x)` yields `flatten(x_head)` and scattering puts a
/// per-head result back into the full vector.
pub fn head_slice(
    head: usize,
    n_rows: usize,
    d_model: usize,
    n_heads: usize,
) -> Result<Vec<usize>> {
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::HeadSplit { d_model, n_heads });
    }
    if head == 0 || head > n_heads {
        return Err(Error::HeadIndex {
            index: head,
            n_heads,
        });
    }
    let d = d_model / n_heads;
    let offset = (head - 1) * d;
    let mut idx = Vec::with_capacity(n_rows * d);
    for r in 0..n_rows {
        for c in 0..d {
            idx.push(r * d_model + offset + c);
        }
    }
    Ok(idx)
}

/// The attention matrix of one head: `softmax(x W_Q (x W_K)ᵀ / denom)`.
///
/// `d_model` is the full width `M`; the denominator defaults to `√M` (see
/// [`crate::transformer::ScaleRoot`]). Every row sums to 1.
pub fn attention_rows(
    x_head: &Mat,
    w_q: &Mat,
    w_k: &Mat,
    d_model: usize,
    cfg: &AttnConfig,
) -> Result<Mat> {
    let q = x_head.matmul(w_q)?;
    let k = x_head.matmul(w_k)?;
    let denom = cfg.scale_root.denominator(d_model, x_head.cols());
    softmax_scores(&q, &k, denom, cfg.causal)
}

/// Lowers one multi-head attention layer at the given input.
///
/// The result is exact for this `x`: the attention matrices `Hᵢ` are
/// computed from `x` and then treated as constants, so the operator depends
/// on the input through them. `apply(flatten(x))` reproduces the forward
/// pass; applying the operator to a different input gives the
/// frozen-attention linearization instead.
pub fn lower_mha(x: &Mat, params: &MhaParams, cfg: &AttnConfig) -> Result<LoweredOp> {
    if x.cols() != params.d_model() {
        return Err(Error::ShapeMismatch {
            op: "lower_mha input width",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: params.d_model(),
            right_cols: params.d_model(),
        });
    }
    let n = x.rows();
    let m = params.d_model();
    let h = params.n_heads();
    let d = params.d_head();
    let size = n * m;
    check_size(size)?;

    // Σᵢ Sᵢᵀ (Hᵢ ⊗ W_Vᵢᵀ) Sᵢ : per-head blocks scattered on disjoint indices.
    let mut summed = Mat::zeros(size, size);
    for head in 1..=h {
        let slice = head_slice(head, n, m, h)?;
        let offset = (head - 1) * d;
        let x_head = Mat::from_fn(n, d, |i, j| x.get(i, offset + j))?;
        let w = &params.heads()[head - 1];
        let attn = attention_rows(&x_head, &w.w_q, &w.w_k, m, cfg)?;
        let block = attn.kron(&w.w_v.transpose());
        for (a, &row_idx) in slice.iter().enumerate() {
            for (b, &col_idx) in slice.iter().enumerate() {
                summed.set(row_idx, col_idx, block.get(a, b));
            }
        }
    }

    // Left-multiply by I_N ⊗ W_Oᵀ: each M-row block gets W_Oᵀ applied.
    let w_ot = params.w_o().transpose();
    let mut matrix = Mat::zeros(size, size);
    for block_row in 0..n {
        for i in 0..m {
            let mut acc = vec![0.0; size];
            for k in 0..m {
                let coeff = w_ot.get(i, k);
                if coeff == 0.0 {
                    continue;
                }
                let src = summed.row(block_row * m + k);
                for (dst, &s) in acc.iter_mut().zip(src) {
                    *dst += coeff * s;
                }
            }
            let dst_row = block_row * m + i;
            for (j, &v) in acc.iter().enumerate() {
                matrix.set(dst_row, j, v);
            }
        }
    }

    LoweredOp::from_matrix(OpKind::Mha, n, m, matrix)
}

/// Chains two lowered operators: `compose(a, b)` applies `b` first.
pub fn compose(after: &LoweredOp, before: &LoweredOp) -> Result<LoweredOp> {
    if after.n_rows() != before.n_rows() || after.n_cols() != before.n_cols() {
        return Err(Error::ShapeMismatch {
            op: "compose",
            left_rows: after.n_rows(),
            left_cols: after.n_cols(),
            right_rows: before.n_rows(),
            right_cols: before.n_cols(),
        });
    }
    let matrix = after.matrix().matmul(before.matrix())?;
    LoweredOp::from_matrix(OpKind::Composed, after.n_rows(), after.n_cols(), matrix)
}

/// Occupancy measurement of a lowered operator at a magnitude threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub threshold: f64,
    pub size: usize,
    /// Entries with `|entry| > threshold`.
    pub entries_above: usize,
    /// `entries_above / size²`.
    pub density: f64,
    /// Per-row counts of entries above the threshold.
    pub row_counts: Vec<usize>,
    /// Per-column counts of entries above the threshold.
    pub col_counts: Vec<usize>,
}

/// Measures the fraction of entries above `threshold` in magnitude.
pub fn density_report(op: &LoweredOp, threshold: f64) -> Result<DensityReport> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold",
            message: format!("must be >= 0, got {threshold}"),
        });
    }
    let size = op.size();
    let mut row_counts = vec![0usize; size];
    let mut col_counts = vec![0usize; size];
    let mut above = 0usize;
    let data = op.matrix().data();
    for i in 0..size {
        for j in 0..size {
            if data[i * size + j].abs() > threshold {
                above += 1;
                row_counts[i] += 1;
                col_counts[j] += 1;
            }
        }
    }
    Ok(DensityReport {
        threshold,
        size,
        entries_above: above,
        density: above as f64 / (size as f64 * size as f64),
        row_counts,
        col_counts,
    })
}
