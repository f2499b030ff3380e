//! Low-rank weight amendment: merging `W + scale·B·A` into a base weight,
//! the identity tying merges to lowered operators, and recovery of planted
//! low-rank deltas from input/output pairs by alternating least squares.
//!
//! Because lowering a linear layer is itself linear in the weight matrix,
//! amending and lowering commute:
//!
//! ```text
//! lower(W + s·BA) = lower(W) + s·lower(BA)
//! ```
//!
//! [`lowered_amendment_gap`] measures both sides and returns the largest
//! entry discrepancy, which should sit at rounding level.

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::lowering::lower_linear;
use crate::mat::Mat;
use crate::rng::Rng;

/// A rank-`r` additive update `scale · B·A` for an `N×N` weight.
///
/// Freshly initialized updates have `B = 0`, so the merged weights start
/// exactly at the base weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankUpdate {
    b: Mat,
    a: Mat,
    scale: f64,
}

impl LowRankUpdate {
    pub fn new(b: Mat, a: Mat, scale: f64) -> Result<Self> {
        if b.cols() != a.rows() || b.rows() != a.cols() {
            return Err(Error::ShapeMismatch {
                op: "low-rank factors",
                left_rows: b.rows(),
                left_cols: b.cols(),
                right_rows: a.rows(),
                right_cols: a.cols(),
            });
        }
        if b.cols() > b.rows() {
            return Err(Error::InvalidParameter {
                name: "rank",
                message: format!("rank {} exceeds weight order {}", b.cols(), b.rows()),
            });
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite {
                context: "update scale",
            });
        }
        Ok(Self { b, a, scale })
    }

    /// Fresh update with `B = 0` and seeded Gaussian `A`.
    pub fn init(n: usize, rank: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        Self::new(Mat::zeros(n, rank), rng.normal_mat(rank, n), scale)
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn n(&self) -> usize {
        self.b.rows()
    }

    /// The unscaled product `B·A`.
    pub fn delta(&self) -> Mat {
        self.b
            .matmul(&self.a)
            .expect("factor shapes were validated")
    }

    /// Same factors with a different merge multiplier.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.b.clone(), self.a.clone(), scale)
    }
}

/// Merged weights `W + scale·B·A`.
pub fn merge(w: &Mat, update: &LowRankUpdate) -> Result<Mat> {
    if w.shape() != (update.n(), update.n()) {
        return Err(Error::ShapeMismatch {
            op: "merge",
            left_rows: w.rows(),
            left_cols: w.cols(),
            right_rows: update.n(),
            right_cols: update.n(),
        });
    }
    w.add(&update.delta().scale(update.scale()))
}

/// Largest entry discrepancy between lowering the merged weights and
/// amending the lowered base operator:
/// `lower(merge(W, u))` vs `lower(W) + scale·lower(BA)`.
pub fn lowered_amendment_gap(w: &Mat, update: &LowRankUpdate, n_cols: usize) -> Result<f64> {
    let merged_then_lowered = lower_linear(&merge(w, update)?, n_cols)?;
    let base = lower_linear(w, n_cols)?;
    let delta_lowered = lower_linear(&update.delta(), n_cols)?;
    let amended = base
        .matrix()
        .add(&delta_lowered.matrix().scale(update.scale()))?;
    merged_then_lowered.matrix().sup_norm_diff(&amended)
}

/// Convergence record of an alternating-least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AlsReport {
    /// Frobenius residual on the training pairs after every half-step.
    pub objective_history: Vec<f64>,
    /// Full iterations performed.
    pub iterations: usize,
    /// Final residual `‖(W_base + sBA)X − Y‖_F`.
    pub final_objective: f64,
}

/// Fits a rank-`rank` update so that `(W_base + scale·B·A)·x ≈ y` over the
/// sample columns of `x` and `y`.
///
/// `B` starts at zero and `A` at seeded Gaussian noise; each half-step
/// solves one factor exactly, so the training residual never increases.
/// Needs at least `N` linearly independent samples.
pub fn fit_als(
    w_base: &Mat,
    x: &Mat,
    y: &Mat,
    rank: usize,
    iters: usize,
    scale: f64,
    rng: &mut Rng,
) -> Result<(LowRankUpdate, AlsReport)> {
    let n = w_base.rows();
    if !w_base.is_square() {
        return Err(Error::NotSquare {
            op: "fit_als base weight",
            rows: w_base.rows(),
            cols: w_base.cols(),
        });
    }
    if x.rows() != n || y.rows() != n || x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "fit_als samples",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: y.rows(),
            right_cols: y.cols(),
        });
    }
    if rank == 0 || rank > n {
        return Err(Error::InvalidParameter {
            name: "rank",
            message: format!("must be in 1..={n}, got {rank}"),
        });
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::InvalidParameter {
            name: "scale",
            message: format!("must be finite and nonzero, got {scale}"),
        });
    }

    // Deficit the update must explain, absorbing the merge multiplier:
    // scale·B·A·X ≈ D  ⇔  B·A·X ≈ D/scale.
    let deficit = y.sub(&w_base.matmul(x)?)?.scale(1.0 / scale);

    // X·Xᵀ must be invertible for the A-step; failure means the samples
    // do not span the input space.
    let xxt = x.matmul(&x.transpose())?;
    let gram_check = cholesky_solve(&xxt, &Mat::identity(n));
    if gram_check.is_err() {
        return Err(Error::RankDeficientSamples);
    }

    let mut a = rng.normal_mat(rank, n);
    let mut b = Mat::zeros(n, rank);
    let mut history = Vec::new();
    let objective = |b: &Mat, a: &Mat| -> Result<f64> {
        let fit = b.matmul(a)?.matmul(x)?;
        Ok(fit.sub(&deficit)?.frobenius_norm())
    };
    history.push(objective(&b, &a)?);

    let stop_at = 1e-14 * (1.0 + deficit.frobenius_norm());
    let mut iterations = 0;
    for _ in 0..iters {
        // B-step: minimize ‖B·Z − D‖ with Z = A·X fixed.
        let z = a.matmul(x)?;
        let zzt = z.matmul(&z.transpose())?;
        let dzt = deficit.matmul(&z.transpose())?;
        let bt = cholesky_solve(&zzt, &dzt.transpose()).map_err(|_| Error::RankDeficientSamples)?;
        b = bt.transpose();
        history.push(objective(&b, &a)?);
        if *history.last().expect("nonempty") <= stop_at {
            iterations += 1;
            break;
        }

        // A-step: minimize ‖B·A·X − D‖ over A.
        // Normal equations: (BᵀB)·A·(XXᵀ) = Bᵀ·D·Xᵀ.
        let btb = b.transpose().matmul(&b)?;
        let rhs = b.transpose().matmul(&deficit)?.matmul(&x.transpose())?;
        let g = cholesky_solve(&btb, &rhs).map_err(|_| Error::SingularSystem)?;
        let at = cholesky_solve(&xxt, &g.transpose()).map_err(|_| Error::RankDeficientSamples)?;
        a = at.transpose();
        history.push(objective(&b, &a)?);
        iterations += 1;
        if *history.last().expect("nonempty") <= stop_at {
            break;
        }
    }

    let final_objective = *history.last().expect("nonempty") * scale.abs();
    let report = AlsReport {
        objective_history: history.iter().map(|v| v * scale.abs()).collect(),
        iterations,
        final_objective,
    };
    Ok((LowRankUpdate::new(b, a, scale)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_b_merge_is_exactly_the_base() {
        let mut rng = Rng::new(31);
        let w = rng.uniform_mat(4, 4, -1.0, 1.0);
        let update = LowRankUpdate::init(4, 2, 1.0, &mut rng).unwrap();
        let merged = merge(&w, &update).unwrap();
        assert_eq!(merged, w);
    }

    #[test]
    fn full_rank_identity_b_recovers_plain_addition() {
        let mut rng = Rng::new(32);
        let w = rng.uniform_mat(3, 3, -1.0, 1.0);
        let delta = rng.uniform_mat(3, 3, -1.0, 1.0);
        let update = LowRankUpdate::new(Mat::identity(3), delta.clone(), 1.0).unwrap();
        let merged = merge(&w, &update).unwrap();
        assert_eq!(merged, w.add(&delta).unwrap());
    }

    #[test]
    fn merge_matches_explicit_oracle() {
        let mut rng = Rng::new(33);
        let w = rng.uniform_mat(5, 5, -1.0, 1.0);
        let b = rng.uniform_mat(5, 2, -1.0, 1.0);
        let a = rng.uniform_mat(2, 5, -1.0, 1.0);
        let update = LowRankUpdate::new(b.clone(), a.clone(), 0.7).unwrap();
        let merged = merge(&w, &update).unwrap();
        let oracle = w.add(&b.matmul(&a).unwrap().scale(0.7)).unwrap();
        assert_eq!(merged, oracle);
    }

    #[test]
    fn merge_is_linear_in_scale() {
        let mut rng = Rng::new(34);
        let b = rng.uniform_mat(4, 2, -1.0, 1.0);
        let a = rng.uniform_mat(2, 4, -1.0, 1.0);
        let unit = LowRankUpdate::new(b.clone(), a.clone(), 1.0).unwrap();
        let scaled = LowRankUpdate::new(b, a, 4.0).unwrap();

        // Against a zero base the merged delta is the scaled product itself,
        // so a power-of-two scale is exact.
        let zero = Mat::zeros(4, 4);
        let unit_delta = merge(&zero, &unit).unwrap();
        let scaled_delta = merge(&zero, &scaled).unwrap();
        assert_eq!(scaled_delta, unit_delta.scale(4.0));

        // A nonzero base rounds the addition, leaving at most ulp noise.
        let w = rng.uniform_mat(4, 4, -1.0, 1.0);
        let unit_delta = merge(&w, &unit).unwrap().sub(&w).unwrap();
        let scaled_delta = merge(&w, &scaled).unwrap().sub(&w).unwrap();
        assert!(scaled_delta.sup_norm_diff(&unit_delta.scale(4.0)).unwrap() <= 1e-14);
    }

    #[test]
    fn amendment_commutes_with_lowering() {
        let mut rng = Rng::new(35);
        for _ in 0..10 {
            let w = rng.uniform_mat(4, 4, -1.0, 1.0);
            let b = rng.uniform_mat(4, 2, -1.0, 1.0);
            let a = rng.uniform_mat(2, 4, -1.0, 1.0);
            let update = LowRankUpdate::new(b, a, 0.5).unwrap();
            let gap = lowered_amendment_gap(&w, &update, 3).unwrap();
            assert!(gap <= 1e-14, "gap {gap}");
        }
    }

    #[test]
    fn amendment_gap_is_zero_for_inert_updates() {
        let mut rng = Rng::new(36);
        let w = rng.uniform_mat(4, 4, -1.0, 1.0);
        let zero_b = LowRankUpdate::init(4, 2, 1.0, &mut rng).unwrap();
        assert_eq!(lowered_amendment_gap(&w, &zero_b, 3).unwrap(), 0.0);
        let b = rng.uniform_mat(4, 2, -1.0, 1.0);
        let a = rng.uniform_mat(2, 4, -1.0, 1.0);
        let zero_scale = LowRankUpdate::new(b, a, 0.0).unwrap();
        assert_eq!(lowered_amendment_gap(&w, &zero_scale, 3).unwrap(), 0.0);
    }

    #[test]
    fn identical_target_converges_immediately() {
        let mut rng = Rng::new(37);
        let w = rng.uniform_mat(4, 4, -1.0, 1.0);
        let x = rng.normal_mat(4, 8);
        let y = w.matmul(&x).unwrap();
        let (update, report) = fit_als(&w, &x, &y, 2, 10, 1.0, &mut rng).unwrap();
        assert!(update.delta().max_abs() <= 1e-12);
        assert!(report.final_objective <= 1e-12);
    }

    #[test]
    fn planted_rank_one_delta_is_recovered() {
        let mut rng = Rng::new(38);
        let n = 4;
        let w_base = rng.uniform_mat(n, n, -1.0, 1.0);
        let u = rng.normal_mat(n, 1);
        let v = rng.normal_mat(1, n);
        let w_star = w_base.add(&u.matmul(&v).unwrap()).unwrap();
        let x = rng.normal_mat(n, 12);
        let y = w_star.matmul(&x).unwrap();
        let (update, _) = fit_als(&w_base, &x, &y, 1, 50, 1.0, &mut rng).unwrap();
        let recovered = merge(&w_base, &update).unwrap();
        let resid = recovered.sub(&w_star).unwrap().frobenius_norm() / w_star.frobenius_norm();
        assert!(resid <= 1e-6, "relative residual {resid}");
    }

    #[test]
    fn planted_rank_two_delta_is_recovered() {
        let mut rng = Rng::new(39);
        let n = 6;
        let w_base = rng.uniform_mat(n, n, -1.0, 1.0);
        let b = rng.normal_mat(n, 2);
        let a = rng.normal_mat(2, n);
        let w_star = w_base.add(&b.matmul(&a).unwrap()).unwrap();
        let x = rng.normal_mat(n, 18);
        let y = w_star.matmul(&x).unwrap();
        let (update, report) = fit_als(&w_base, &x, &y, 2, 50, 1.0, &mut rng).unwrap();
        assert!(report.iterations <= 50);
        let recovered = merge(&w_base, &update).unwrap();
        let resid = recovered.sub(&w_star).unwrap().frobenius_norm() / w_star.frobenius_norm();
        assert!(resid <= 1e-4, "relative residual {resid}");
    }

    #[test]
    fn objective_never_increases_across_half_steps() {
        let mut rng = Rng::new(40);
        let n = 5;
        let w_base = rng.uniform_mat(n, n, -1.0, 1.0);
        let b = rng.normal_mat(n, 2);
        let a = rng.normal_mat(2, n);
        let w_star = w_base.add(&b.matmul(&a).unwrap()).unwrap();
        let x = rng.normal_mat(n, 15);
        let y = w_star.matmul(&x).unwrap();
        let (_, report) = fit_als(&w_base, &x, &y, 2, 20, 1.0, &mut rng).unwrap();
        for pair in report.objective_history.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9 * (1.0 + pair[0]),
                "objective rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn rank_deficient_samples_are_rejected() {
        let mut rng = Rng::new(41);
        let n = 4;
        let w = rng.uniform_mat(n, n, -1.0, 1.0);
        // Two distinct samples cannot span R^4.
        let x = rng.normal_mat(n, 2);
        let y = w.matmul(&x).unwrap();
        let err = fit_als(&w, &x, &y, 1, 10, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::RankDeficientSamples));
    }

    #[test]
    fn update_constructor_rejects_mismatched_factors() {
        assert!(LowRankUpdate::new(Mat::zeros(4, 2), Mat::zeros(3, 4), 1.0).is_err());
        assert!(LowRankUpdate::new(Mat::zeros(2, 3), Mat::zeros(3, 2), 1.0).is_err());
    }
}
