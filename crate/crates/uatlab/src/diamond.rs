//! The diamond product: a transpose-flavored multiplication written `W ⋄ x`.
//!
//! The product pairs a parameter matrix with a column vector by summing each
//! column of the matrix against the vector, so `W ⋄ x = Wᵀx`. The operation
//! is commutative in its two operands (`W ⋄ x = x ⋄ W`) but neither
//! associative nor distributive; chained expressions are evaluated left to
//! right with explicit brackets. For square matrices the same column-sum
//! reading gives `W₁ ⋄ W₂ = W₁ᵀW₂`, which is what makes the two chain
//! identities below hold:
//!
//! ```text
//! W₁ ⋄ [x ⋄ W₂]  ==  W₂ᵀ ⋄ W₁ ⋄ x
//! [W₁ ⋄ x] ⋄ W₂  ==  W₁ᵀ ⋄ W₂ ⋄ x
//! ```

use crate::error::{Error, Result};
use crate::mat::Mat;

fn is_column(m: &Mat) -> bool {
    m.cols() == 1
}

/// Column-sum product of a matrix with a column vector: `W ⋄ x = Wᵀx`.
///
/// The operands commute; whichever side is the column vector is paired
/// against the columns of the other. Both row counts must agree.
pub fn diamond(a: &Mat, b: &Mat) -> Result<Mat> {
    let (w, x) = if is_column(b) {
        (a, b)
    } else if is_column(a) {
        (b, a)
    } else {
        return Err(Error::ShapeMismatch {
            op: "diamond",
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    };
    if w.rows() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "diamond",
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    // i-th output entry: the i-th column of w summed against x.
    let mut out = Mat::zeros(w.cols(), 1);
    for i in 0..w.cols() {
        let mut acc = 0.0;
        for k in 0..w.rows() {
            acc += w.get(k, i) * x.get(k, 0);
        }
        out.set(i, 0, acc);
    }
    Ok(out)
}

/// Diamond product extended to square operands: `W₁ ⋄ W₂ = W₁ᵀW₂`.
///
/// Vector operands delegate to [`diamond`]. Rectangular matrix pairs are
/// rejected: the chain identities are only derived for square factors.
pub fn diamond_general(a: &Mat, b: &Mat) -> Result<Mat> {
    if is_column(a) || is_column(b) {
        return diamond(a, b);
    }
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "diamond_general",
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    a.transpose().matmul(b)
}

/// Evaluates a chain `m₀ ⋄ m₁ ⋄ … ⋄ mₖ` left to right.
pub fn diamond_chain(operands: &[&Mat]) -> Result<Mat> {
    let (first, rest) = operands.split_first().ok_or(Error::InvalidParameter {
        name: "operands",
        message: "diamond chain needs at least one operand".to_string(),
    })?;
    let mut acc = (*first).clone();
    for m in rest {
        acc = diamond_general(&acc, m)?;
    }
    Ok(acc)
}
