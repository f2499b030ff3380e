//! Magnitude pruning with explicit deviation bounds.
//!
//! For sigmoidal sums, each term gets a contribution score: the sup over
//! the box grid of the term's absolute value. Terms at or below a threshold
//! are dropped, splitting the index set into a pruned part and a kept part.
//! The removed mass bounds the damage pointwise, so the report checks
//!
//! ```text
//! post_error ≤ pre_error + Σ_{pruned} score_j
//! ```
//!
//! which must always hold; a violation means the implementation is wrong,
//! not the data. Lowered operators are pruned entrywise instead, with the
//! deviation on any input bounded by the max-absolute-row-sum norm of the
//! zeroed part times the input's sup norm.

use crate::error::{Error, Result};
use crate::flatten::FlatVec;
use crate::lowering::LoweredOp;
use crate::uat::{sup_error, DomainBox, SigmoidalSum, Target};

/// Outcome of a term-pruning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    /// Indices of terms kept, ascending.
    pub kept: Vec<usize>,
    /// Indices of terms removed, ascending.
    pub pruned: Vec<usize>,
    /// Per-term contribution scores of the original sum.
    pub scores: Vec<f64>,
    /// Sum of the scores of removed terms.
    pub pruned_mass: f64,
    /// Sup error of the original sum against the target.
    pub pre_error: f64,
    /// Sup error of the pruned sum against the target.
    pub post_error: f64,
    /// Whether `post_error <= pre_error + pruned_mass`.
    pub bound_satisfied: bool,
}

/// Per-term contribution scores: sup over the box grid of the term's
/// absolute value, maximized over output dimensions.
pub fn score_terms(g: &SigmoidalSum, domain: &DomainBox) -> Result<Vec<f64>> {
    if g.input_dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            context: "score input dimension",
            expected: domain.dim(),
            got: g.input_dim(),
        });
    }
    let mut scores = vec![0.0f64; g.n_terms()];
    for x in domain.points() {
        for (j, t) in g.terms().iter().enumerate() {
            for v in t.value(&x) {
                scores[j] = scores[j].max(v.abs());
            }
        }
    }
    Ok(scores)
}

/// The score value at a percentile in `[0, 100]` (nearest-rank on the
/// sorted scores).
pub fn threshold_at_percentile(scores: &[f64], percentile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyModel);
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidParameter {
            name: "percentile",
            message: format!("must be in [0, 100], got {percentile}"),
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let rank = ((percentile / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    Ok(sorted[rank])
}

/// Removes every term whose score is `<= threshold` and re-measures the
/// error against the target.
///
/// Fails with [`Error::EmptyModel`] if nothing would survive.
pub fn prune_terms(
    g: &SigmoidalSum,
    target: &dyn Target,
    domain: &DomainBox,
    scores: &[f64],
    threshold: f64,
) -> Result<(SigmoidalSum, PruneReport)> {
    if scores.len() != g.n_terms() {
        return Err(Error::DimensionMismatch {
            context: "score list",
            expected: g.n_terms(),
            got: scores.len(),
        });
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold",
            message: format!("must be >= 0, got {threshold}"),
        });
    }
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    for (j, &c) in scores.iter().enumerate() {
        if c <= threshold {
            pruned.push(j);
        } else {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyModel);
    }
    let slim = g.retain(&kept)?;
    let pruned_mass: f64 = pruned.iter().map(|&j| scores[j]).sum();
    let pre_error = sup_error(g, target, domain)?;
    let post_error = sup_error(&slim, target, domain)?;
    let report = PruneReport {
        kept,
        pruned,
        scores: scores.to_vec(),
        pruned_mass,
        pre_error,
        post_error,
        bound_satisfied: post_error <= pre_error + pruned_mass,
    };
    Ok((slim, report))
}

/// Outcome of entrywise operator pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryPruneReport {
    pub threshold: f64,
    /// Entries zeroed by the pass.
    pub zeroed: usize,
    pub nnz_before: usize,
    pub nnz_after: usize,
    /// Max absolute row sum of the removed part `A - Ã`.
    pub delta_row_norm: f64,
    /// Per calibration input: (observed sup deviation, norm bound).
    pub calib: Vec<(f64, f64)>,
    /// Whether every observed deviation stayed within its bound.
    pub within_bound: bool,
}

/// Zeroes operator entries with `|entry| <= threshold` and checks the
/// induced deviation bound on each calibration input.
pub fn prune_entries(
    op: &LoweredOp,
    threshold: f64,
    calib: &[FlatVec],
) -> Result<(LoweredOp, EntryPruneReport)> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold",
            message: format!("must be >= 0, got {threshold}"),
        });
    }
    let size = op.size();
    let pruned_matrix = op
        .matrix()
        .map(|v| if v.abs() <= threshold { 0.0 } else { v });
    let delta = op.matrix().sub(&pruned_matrix)?;
    let zeroed = delta.count_nonzero();

    // ‖A - Ã‖ as the max absolute row sum (the operator norm for sup-norm
    // inputs), so ‖(A - Ã)x‖_∞ ≤ delta_row_norm · ‖x‖_∞.
    let mut delta_row_norm = 0.0f64;
    for i in 0..size {
        let row_sum: f64 = delta.row(i).iter().map(|v| v.abs()).sum();
        delta_row_norm = delta_row_norm.max(row_sum);
    }

    let slim = LoweredOp::from_matrix(op.kind(), op.n_rows(), op.n_cols(), pruned_matrix)?;

    let mut calib_results = Vec::with_capacity(calib.len());
    let mut within = true;
    for x in calib {
        if x.n_rows() != op.n_rows() || x.n_cols() != op.n_cols() {
            return Err(Error::ShapeMismatch {
                op: "prune_entries calibration input",
                left_rows: op.n_rows(),
                left_cols: op.n_cols(),
                right_rows: x.n_rows(),
                right_cols: x.n_cols(),
            });
        }
        // Deviation computed from the removed part directly.
        let col = x.as_column_mat();
        let dev = delta.matmul(&col)?;
        let observed = dev.max_abs();
        let bound = delta_row_norm * x.sup_norm();
        // Tiny relative slack: observed and bound round differently when
        // the inequality is tight in exact arithmetic.
        if observed > bound * (1.0 + 1e-12) {
            within = false;
        }
        calib_results.push((observed, bound));
    }

    let report = EntryPruneReport {
        threshold,
        zeroed,
        nnz_before: op.nnz(),
        nnz_after: slim.nnz(),
        delta_row_norm,
        calib: calib_results,
        within_bound: within,
    };
    Ok((slim, report))
}

/// Percentile of the absolute values of an operator's entries, for picking
/// entry-pruning thresholds.
pub fn entry_abs_percentile(op: &LoweredOp, percentile: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidParameter {
            name: "percentile",
            message: format!("must be in [0, 100], got {percentile}"),
        });
    }
    let mut mags: Vec<f64> = op.matrix().data().iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("entries are finite"));
    let rank = ((percentile / 100.0) * (mags.len() - 1) as f64).round() as usize;
    Ok(mags[rank])
}

/// How far an operator is from the identity, in sup norm. A near-zero value
/// marks a factor of a composed stack as removable.
pub fn identity_distance(op: &LoweredOp) -> f64 {
    let size = op.size();
    let data = op.matrix().data();
    let mut worst = 0.0f64;
    for i in 0..size {
        for j in 0..size {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((data[i * size + j] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatten::flatten;
    use crate::lowering::lower_linear;
    use crate::mat::Mat;
    use crate::rng::Rng;
    use crate::uat::{fit_random_features, targets, FnTarget, Term};

    fn small_sum(rng: &mut Rng, n_terms: usize) -> SigmoidalSum {
        let terms = (0..n_terms)
            .map(|_| {
                Term::new(
                    rng.uniform_mat(1, 1, -6.0, 6.0),
                    vec![rng.uniform(-2.0, 2.0)],
                    vec![rng.uniform(-1.0, 1.0)],
                )
                .unwrap()
            })
            .collect();
        SigmoidalSum::new(1, 1, terms).unwrap()
    }

    #[test]
    fn zero_gain_terms_score_zero() {
        let t0 = Term::new(Mat::from_rows(&[vec![2.0]]).unwrap(), vec![0.3], vec![0.0]).unwrap();
        let t1 = Term::new(Mat::from_rows(&[vec![0.0]]).unwrap(), vec![0.0], vec![1.0]).unwrap();
        let g = SigmoidalSum::new(1, 1, vec![t0, t1]).unwrap();
        let domain = DomainBox::unit_interval(32).unwrap();
        let scores = score_terms(&g, &domain).unwrap();
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[1], 0.5); // flat sigmoid at zero, unit gain
    }

    #[test]
    fn scores_match_brute_force_sweep() {
        let mut rng = Rng::new(21);
        let g = small_sum(&mut rng, 12);
        let domain = DomainBox::unit_interval(41).unwrap();
        let scores = score_terms(&g, &domain).unwrap();

        for (j, t) in g.terms().iter().enumerate() {
            let mut brute = 0.0f64;
            for i in 0..41 {
                let x = [i as f64 / 40.0];
                brute = brute.max(t.value(&x)[0].abs());
            }
            assert_eq!(scores[j], brute, "term {j}");
        }
    }

    #[test]
    fn zero_threshold_prunes_nothing_when_scores_positive() {
        let mut rng = Rng::new(22);
        let g = small_sum(&mut rng, 8);
        let domain = DomainBox::unit_interval(33).unwrap();
        let target = targets::builtin("sin").unwrap().target;
        let scores = score_terms(&g, &domain).unwrap();
        assert!(scores.iter().all(|&c| c > 0.0));
        let (slim, report) = prune_terms(&g, &target, &domain, &scores, 0.0).unwrap();
        assert_eq!(slim.n_terms(), g.n_terms());
        assert!(report.pruned.is_empty());
        assert_eq!(report.pre_error, report.post_error);
        assert!(report.bound_satisfied);
    }

    #[test]
    fn zero_gain_terms_prune_without_changing_grid_outputs() {
        let mut rng = Rng::new(23);
        let g = small_sum(&mut rng, 6);
        let domain = DomainBox::unit_interval(65).unwrap();
        let target = targets::builtin("sin").unwrap().target;

        // Append three inert terms.
        let mut terms = g.terms().to_vec();
        for _ in 0..3 {
            terms.push(
                Term::new(
                    rng.uniform_mat(1, 1, -6.0, 6.0),
                    vec![rng.uniform(-1.0, 1.0)],
                    vec![0.0],
                )
                .unwrap(),
            );
        }
        let padded = SigmoidalSum::new(1, 1, terms).unwrap();
        let scores = score_terms(&padded, &domain).unwrap();
        let (slim, report) = prune_terms(&padded, &target, &domain, &scores, 0.0).unwrap();

        assert_eq!(report.pruned, vec![6, 7, 8]);
        assert_eq!(slim.n_terms(), 6);
        assert_eq!(report.pruned_mass, 0.0);
        for x in domain.points() {
            assert_eq!(slim.eval(&x).unwrap(), padded.eval(&x).unwrap());
        }
    }

    #[test]
    fn bound_holds_on_fitted_sum() {
        let spec = targets::builtin("sin").unwrap();
        let domain = DomainBox::unit_interval(128).unwrap();
        let mut rng = Rng::new(24);
        let g = fit_random_features(&spec.target, &domain, 128, 1e-8, &mut rng).unwrap();
        let scores = score_terms(&g, &domain).unwrap();
        let tau = threshold_at_percentile(&scores, 25.0).unwrap();
        let (_, report) = prune_terms(&g, &spec.target, &domain, &scores, tau).unwrap();
        assert!(report.bound_satisfied);
        assert!(report.post_error <= report.pre_error + report.pruned_mass);
        assert!(!report.pruned.is_empty());
    }

    #[test]
    fn fitted_sin_prune_regression_values() {
        // Frozen run: seed 7, 128 terms, ridge 1e-8, threshold at the 25th
        // score percentile on the target's own 512-point grid.
        let spec = targets::builtin("sin").unwrap();
        let mut rng = Rng::new(7);
        let g = fit_random_features(&spec.target, &spec.domain, 128, 1e-8, &mut rng).unwrap();
        let scores = score_terms(&g, &spec.domain).unwrap();
        let tau = threshold_at_percentile(&scores, 25.0).unwrap();
        let (_, report) = prune_terms(&g, &spec.target, &spec.domain, &scores, tau).unwrap();
        assert!(report.bound_satisfied);
        assert_eq!(report.pruned.len(), 33);
        let expected_post = 1.8243962800248426e-3;
        assert!(
            (report.post_error - expected_post).abs() <= 1e-6 * expected_post,
            "post_error drifted: {:e}",
            report.post_error
        );
    }

    #[test]
    fn larger_thresholds_prune_supersets() {
        let mut rng = Rng::new(25);
        let g = small_sum(&mut rng, 16);
        let domain = DomainBox::unit_interval(33).unwrap();
        let target = FnTarget::scalar(1, |_| 0.0);
        let scores = score_terms(&g, &domain).unwrap();
        let mut taus: Vec<f64> = scores.clone();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut previous: Vec<usize> = Vec::new();
        for tau in taus.iter().take(taus.len() - 1) {
            let (_, report) = prune_terms(&g, &target, &domain, &scores, *tau).unwrap();
            assert!(
                previous.iter().all(|j| report.pruned.contains(j)),
                "pruned set shrank as threshold grew"
            );
            previous = report.pruned;
        }
    }

    #[test]
    fn pruning_twice_equals_pruning_once() {
        let mut rng = Rng::new(26);
        let g = small_sum(&mut rng, 12);
        let domain = DomainBox::unit_interval(33).unwrap();
        let target = FnTarget::scalar(1, |_| 0.0);
        let scores = score_terms(&g, &domain).unwrap();
        let tau = threshold_at_percentile(&scores, 40.0).unwrap();
        let (once, _) = prune_terms(&g, &target, &domain, &scores, tau).unwrap();
        let scores_again = score_terms(&once, &domain).unwrap();
        let (twice, report) = prune_terms(&once, &target, &domain, &scores_again, tau).unwrap();
        assert!(report.pruned.is_empty());
        assert_eq!(once, twice);
    }

    #[test]
    fn pruning_everything_is_an_error() {
        let mut rng = Rng::new(27);
        let g = small_sum(&mut rng, 4);
        let domain = DomainBox::unit_interval(17).unwrap();
        let target = FnTarget::scalar(1, |_| 0.0);
        let scores = score_terms(&g, &domain).unwrap();
        let tau = scores.iter().fold(0.0f64, |a, &b| a.max(b));
        let err = prune_terms(&g, &target, &domain, &scores, tau).unwrap_err();
        assert!(matches!(err, Error::EmptyModel));
    }

    #[test]
    fn entry_prune_with_zero_threshold_is_identity() {
        let mut rng = Rng::new(28);
        let w = rng.uniform_mat(3, 3, -1.0, 1.0);
        let op = lower_linear(&w, 2).unwrap();
        let calib = vec![flatten(&rng.uniform_mat(3, 2, -1.0, 1.0))];
        let (slim, report) = prune_entries(&op, 0.0, &calib).unwrap();
        assert_eq!(slim.matrix(), op.matrix());
        assert_eq!(report.zeroed, 0);
        assert!(report.within_bound);
        assert_eq!(report.calib[0].0, 0.0);
    }

    #[test]
    fn entry_prune_leaves_identity_operator_alone() {
        let op = lower_linear(&Mat::identity(4), 2).unwrap();
        let (slim, report) = prune_entries(&op, 0.5, &[]).unwrap();
        assert_eq!(slim.matrix(), op.matrix());
        assert_eq!(report.nnz_after, report.nnz_before);
    }

    #[test]
    fn entry_prune_deviation_respects_norm_bound() {
        let mut rng = Rng::new(29);
        let w = rng.uniform_mat(4, 4, -1.0, 1.0);
        let op = lower_linear(&w, 3).unwrap();
        let tau = entry_abs_percentile(&op, 1.0).unwrap();
        let calib: Vec<_> = (0..20)
            .map(|_| flatten(&rng.uniform_mat(4, 3, -2.0, 2.0)))
            .collect();
        let (_, report) = prune_entries(&op, tau, &calib).unwrap();
        assert!(report.within_bound);
        for (observed, bound) in &report.calib {
            assert!(observed <= &(bound * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn identity_distance_of_identity_operator_is_zero() {
        let op = lower_linear(&Mat::identity(3), 2).unwrap();
        assert_eq!(identity_distance(&op), 0.0);
        let mut rng = Rng::new(30);
        let other = lower_linear(&rng.uniform_mat(3, 3, 2.0, 3.0), 2).unwrap();
        assert!(identity_distance(&other) > 1.0);
    }

    #[test]
    fn percentile_threshold_brackets_scores() {
        let scores = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(threshold_at_percentile(&scores, 0.0).unwrap(), 1.0);
        assert_eq!(threshold_at_percentile(&scores, 100.0).unwrap(), 5.0);
        assert_eq!(threshold_at_percentile(&scores, 50.0).unwrap(), 3.0);
        assert!(threshold_at_percentile(&scores, 120.0).is_err());
    }
}
