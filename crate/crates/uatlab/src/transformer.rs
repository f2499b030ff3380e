//! Reference forward passes for the two sublayers this crate lowers: the
//! square linear map `x ↦ Wx` on multi-channel input, and multi-head
//! attention in its plain form (no residual path, no layer norm, no
//! dropout). These implementations are the oracles every lowering is
//! checked against, so they stay as close to the defining formulas as
//! possible: split the columns into heads, form the per-head attention
//! matrix, apply it to the value projection, concatenate, and project.

use crate::error::{Error, Result};
use crate::mat::{softmax_rows, Mat};
use crate::rng::Rng;

/// Which width enters the attention score denominator `1/√(·)`.
///
/// The default divides by the full model width `M`; `HeadDim` switches to
/// the per-head width `d = M/h` used by most standard implementations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleRoot {
    #[default]
    ModelWidth,
    HeadDim,
}

impl ScaleRoot {
    pub fn denominator(self, d_model: usize, d_head: usize) -> f64 {
        match self {
            ScaleRoot::ModelWidth => (d_model as f64).sqrt(),
            ScaleRoot::HeadDim => (d_head as f64).sqrt(),
        }
    }
}

/// Attention evaluation options shared by the oracle and the lowering.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttnConfig {
    pub scale_root: ScaleRoot,
    /// Mask scores above the diagonal before the row softmax.
    pub causal: bool,
}

/// Square weight matrix applied on the left of a multi-channel input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weight: Mat,
}

impl LinearLayer {
    pub fn new(weight: Mat) -> Result<Self> {
        if !weight.is_square() {
            return Err(Error::NotSquare {
                op: "linear layer weight",
                rows: weight.rows(),
                cols: weight.cols(),
            });
        }
        Ok(Self { weight })
    }

    pub fn weight(&self) -> &Mat {
        &self.weight
    }

    pub fn n(&self) -> usize {
        self.weight.rows()
    }
}

/// Query/key/value projections for one attention head, each `d×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

/// Parameters of one multi-head attention layer.
///
/// The input's feature dimension `M` is split evenly over `h` heads, so
/// each head owns square `d×d` projections with `d = M/h`; the output
/// projection mixes the concatenated heads back to width `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    n_heads: usize,
    d_model: usize,
    heads: Vec<HeadWeights>,
    w_o: Mat,
}

impl MhaParams {
    pub fn new(n_heads: usize, heads: Vec<HeadWeights>, w_o: Mat) -> Result<Self> {
        if !w_o.is_square() {
            return Err(Error::NotSquare {
                op: "output projection",
                rows: w_o.rows(),
                cols: w_o.cols(),
            });
        }
        let d_model = w_o.rows();
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::HeadSplit { d_model, n_heads });
        }
        if heads.len() != n_heads {
            return Err(Error::DimensionMismatch {
                context: "head weight list",
                expected: n_heads,
                got: heads.len(),
            });
        }
        let d_head = d_model / n_heads;
        for h in &heads {
            for (m, name) in [(&h.w_q, "w_q"), (&h.w_k, "w_k"), (&h.w_v, "w_v")] {
                if m.shape() != (d_head, d_head) {
                    return Err(Error::ShapeMismatch {
                        op: match name {
                            "w_q" => "head projection w_q",
                            "w_k" => "head projection w_k",
                            _ => "head projection w_v",
                        },
                        left_rows: m.rows(),
                        left_cols: m.cols(),
                        right_rows: d_head,
                        right_cols: d_head,
                    });
                }
            }
        }
        Ok(Self {
            n_heads,
            d_model,
            heads,
            w_o,
        })
    }

    /// Random parameters with entries uniform in `[-1, 1)`.
    pub fn random(n_heads: usize, d_model: usize, rng: &mut Rng) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::HeadSplit { d_model, n_heads });
        }
        let d = d_model / n_heads;
        let heads = (0..n_heads)
            .map(|_| HeadWeights {
                w_q: rng.uniform_mat(d, d, -1.0, 1.0),
                w_k: rng.uniform_mat(d, d, -1.0, 1.0),
                w_v: rng.uniform_mat(d, d, -1.0, 1.0),
            })
            .collect();
        let w_o = rng.uniform_mat(d_model, d_model, -1.0, 1.0);
        Self::new(n_heads, heads, w_o)
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn heads(&self) -> &[HeadWeights] {
        &self.heads
    }

    pub fn w_o(&self) -> &Mat {
        &self.w_o
    }
}

/// One attention layer wrapped as a forwardable unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaLayer {
    pub params: MhaParams,
}

impl MhaLayer {
    pub fn new(params: MhaParams) -> Self {
        Self { params }
    }
}

/// `W · x` with shape checking.
pub fn linear_forward(layer: &LinearLayer, x: &Mat) -> Result<Mat> {
    layer.weight.matmul(x)
}

/// Row softmax of `Q Kᵀ / denom`, with optional causal masking of the
/// entries above the diagonal.
pub fn softmax_scores(q: &Mat, k: &Mat, denom: f64, causal: bool) -> Result<Mat> {
    let mut scores = q.matmul(&k.transpose())?.scale(1.0 / denom);
    if causal {
        for i in 0..scores.rows() {
            for j in i + 1..scores.cols() {
                scores.set(i, j, f64::NEG_INFINITY);
            }
        }
    }
    Ok(softmax_rows(&scores))
}

/// Splits the columns of `x` into `n_heads` contiguous blocks.
pub fn split_heads(x: &Mat, n_heads: usize) -> Result<Vec<Mat>> {
    if n_heads == 0 || !x.cols().is_multiple_of(n_heads) {
        return Err(Error::HeadSplit {
            d_model: x.cols(),
            n_heads,
        });
    }
    let d = x.cols() / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let block = Mat::from_fn(x.rows(), d, |i, j| x.get(i, h * d + j))?;
        heads.push(block);
    }
    Ok(heads)
}

/// Multi-head attention forward pass.
///
/// Per head `i`: `Ĥᵢ = softmax(xᵢ W_Qᵢ (xᵢ W_Kᵢ)ᵀ / denom) · (xᵢ W_Vᵢ)`,
/// then the concatenated heads are projected by `W_O`. The score
/// denominator is `√M` by default (see [`ScaleRoot`]).
pub fn mha_forward(layer: &MhaLayer, x: &Mat, cfg: &AttnConfig) -> Result<Mat> {
    let p = &layer.params;
    if x.cols() != p.d_model() {
        return Err(Error::ShapeMismatch {
            op: "mha input width",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: p.d_model(),
            right_cols: p.d_model(),
        });
    }
    let n = x.rows();
    let denom = cfg.scale_root.denominator(p.d_model(), p.d_head());
    let xs = split_heads(x, p.n_heads())?;

    let mut concat = Mat::zeros(n, p.d_model());
    let d = p.d_head();
    for (h, (x_h, w)) in xs.iter().zip(p.heads()).enumerate() {
        let q = x_h.matmul(&w.w_q)?;
        let k = x_h.matmul(&w.w_k)?;
        let attn = softmax_scores(&q, &k, denom, cfg.causal)?;
        let v = x_h.matmul(&w.w_v)?;
        let head_out = attn.matmul(&v)?;
        for i in 0..n {
            for j in 0..d {
                concat.set(i, h * d + j, head_out.get(i, j));
            }
        }
    }
    concat.matmul(p.w_o())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_linear_layer_is_noop() {
        let layer = LinearLayer::new(Mat::identity(3)).unwrap();
        let x = mat(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(linear_forward(&layer, &x).unwrap(), x);
    }

    #[test]
    fn permutation_weight_swaps_rows() {
        let layer = LinearLayer::new(mat(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let x = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let y = linear_forward(&layer, &x).unwrap();
        assert_eq!(y, mat(&[&[3.0, 4.0], &[1.0, 2.0]]));
    }

    #[test]
    fn linear_layer_rejects_rectangular_weight() {
        assert!(LinearLayer::new(Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn linear_forward_pins_to_the_matrix_product() {
        let mut rng = Rng::new(19);
        let w = rng.uniform_mat(4, 4, -2.0, 2.0);
        let x = rng.uniform_mat(4, 3, -2.0, 2.0);
        let layer = LinearLayer::new(w.clone()).unwrap();
        assert_eq!(linear_forward(&layer, &x).unwrap(), w.matmul(&x).unwrap());
    }

    fn uniform_attention_params(m: usize) -> MhaParams {
        MhaParams::new(
            1,
            vec![HeadWeights {
                w_q: Mat::zeros(m, m),
                w_k: Mat::zeros(m, m),
                w_v: Mat::identity(m),
            }],
            Mat::identity(m),
        )
        .unwrap()
    }

    #[test]
    fn zero_queries_average_the_rows() {
        // Zero W_Q/W_K makes every attention row uniform, so each output row
        // is the column mean of x.
        let layer = MhaLayer::new(uniform_attention_params(3));
        let x = mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let y = mha_forward(&layer, &x, &AttnConfig::default()).unwrap();
        for j in 0..3 {
            let mean = (x.get(0, j) + x.get(1, j)) / 2.0;
            for i in 0..2 {
                assert_abs_diff_eq!(y.get(i, j), mean, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_row_attention_is_value_projection() {
        let mut rng = Rng::new(17);
        let params = MhaParams::random(2, 4, &mut rng).unwrap();
        let x = rng.uniform_mat(1, 4, -1.0, 1.0);
        let layer = MhaLayer::new(params.clone());
        let y = mha_forward(&layer, &x, &AttnConfig::default()).unwrap();

        // With N = 1 the attention matrix is [[1]] per head.
        let xs = split_heads(&x, 2).unwrap();
        let mut concat = Mat::zeros(1, 4);
        for (h, (x_h, w)) in xs.iter().zip(params.heads()).enumerate() {
            let v = x_h.matmul(&w.w_v).unwrap();
            for j in 0..2 {
                concat.set(0, h * 2 + j, v.get(0, j));
            }
        }
        let expected = concat.matmul(params.w_o()).unwrap();
        assert!(y.sup_norm_diff(&expected).unwrap() <= 1e-15);
    }

    #[test]
    fn score_scaling_uses_model_width_by_default() {
        // Hand expansion on a 2x2 single-head case, with the exponentials
        // written out directly so the denominator convention stays pinned.
        let x = mat(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let w_q = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w_k = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let w_v = Mat::identity(2);
        let params = MhaParams::new(
            1,
            vec![HeadWeights {
                w_q: w_q.clone(),
                w_k: w_k.clone(),
                w_v,
            }],
            Mat::identity(2),
        )
        .unwrap();
        let y = mha_forward(&MhaLayer::new(params), &x, &AttnConfig::default()).unwrap();

        // q = x, k = x with swapped columns: k = [[0,1],[2,0]].
        // scores = q kᵀ / sqrt(2) = [[0,2],[2,0]] / sqrt(2).
        let s = 2.0 / 2.0_f64.sqrt();
        let e = s.exp();
        let a00 = 1.0 / (1.0 + e);
        let a01 = e / (1.0 + e);
        // row 1 mirrors row 0
        let expected = mat(&[
            &[a00 * 1.0 + a01 * 0.0, a00 * 0.0 + a01 * 2.0],
            &[a01 * 1.0 + a00 * 0.0, a01 * 0.0 + a00 * 2.0],
        ]);
        assert!(y.sup_norm_diff(&expected).unwrap() <= 1e-14);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(23);
        let params = MhaParams::random(2, 6, &mut rng).unwrap();
        let x = rng.uniform_mat(4, 6, -2.0, 2.0);
        let layer = MhaLayer::new(params);
        let a = mha_forward(&layer, &x, &AttnConfig::default()).unwrap();
        let b = mha_forward(&layer, &x, &AttnConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn causal_mask_keeps_rows_normalized() {
        let mut rng = Rng::new(29);
        let params = MhaParams::random(1, 3, &mut rng).unwrap();
        let x = rng.uniform_mat(4, 3, -1.0, 1.0);
        let cfg = AttnConfig {
            causal: true,
            ..AttnConfig::default()
        };
        let y = mha_forward(&MhaLayer::new(params), &x, &cfg).unwrap();
        assert!(y.is_finite());
    }

    #[test]
    fn head_split_must_divide_width() {
        assert!(MhaParams::random(3, 4, &mut Rng::new(0)).is_err());
        let x = Mat::zeros(2, 4);
        assert!(split_heads(&x, 3).is_err());
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut rng = Rng::new(31);
        let params = MhaParams::random(2, 4, &mut rng).unwrap();
        let x = rng.uniform_mat(2, 6, -1.0, 1.0);
        assert!(mha_forward(&MhaLayer::new(params), &x, &AttnConfig::default()).is_err());
    }
}
