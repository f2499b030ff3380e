//! Sigmoidal sums: finite mixtures `G(x) = Σⱼ αⱼ σ(Wⱼᵀx + θⱼ)` fitted to a
//! target function on a bounded box, and the sup-style error that measures
//! how well they approximate it.
//!
//! The scalar form extends to vector-valued targets by giving each term one
//! weight column, one bias, and one gain per output dimension; with one
//! output the extended form evaluates through the identical code path.
//!
//! Fitting is done with random features: hidden weights and biases are
//! sampled once from a seeded generator, and only the gains are solved for,
//! by ridge-regularized least squares on the box's evaluation grid. That
//! keeps fits closed-form and exactly reproducible from a seed. Error is
//! measured on the same finite grid, so the reported sup-error is a lower
//! bound on the true supremum over the box.

use crate::error::{Error, Result};
use crate::linalg::ridge_lstsq;
use crate::mat::{sigmoid, Mat};
use crate::rng::Rng;

/// Grid points per dimension used by default boxes.
pub const DEFAULT_GRID_RESOLUTION: usize = 512;

/// An axis-aligned box with a per-dimension evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || upper.len() != dim || resolution.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "domain box",
                expected: dim,
                got: upper.len().min(resolution.len()),
            });
        }
        for d in 0..dim {
            if lower[d] >= upper[d] || !lower[d].is_finite() || !upper[d].is_finite() {
                return Err(Error::InvalidParameter {
                    name: "bounds",
                    message: format!(
                        "dimension {d}: need finite lower < upper, got [{}, {}]",
                        lower[d], upper[d]
                    ),
                });
            }
            if resolution[d] < 2 {
                return Err(Error::InvalidParameter {
                    name: "resolution",
                    message: format!("dimension {d}: need at least 2 grid points"),
                });
            }
        }
        Ok(Self {
            lower,
            upper,
            resolution,
        })
    }

    /// The unit interval `[0, 1]` with the given grid resolution.
    pub fn unit_interval(resolution: usize) -> Result<Self> {
        Self::new(vec![0.0], vec![1.0], vec![resolution])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    /// Total number of grid points.
    pub fn n_points(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Grid point for a flat index, last dimension fastest.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut coords = vec![0usize; self.dim()];
        for d in (0..self.dim()).rev() {
            coords[d] = rem % self.resolution[d];
            rem /= self.resolution[d];
        }
        coords
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                let t = c as f64 / (self.resolution[d] - 1) as f64;
                self.lower[d] + (self.upper[d] - self.lower[d]) * t
            })
            .collect()
    }

    /// Iterates over all grid points in flat-index order.
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.n_points()).map(|i| self.point(i))
    }
}

/// A function to approximate on a box.
pub trait Target {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
}

type TargetFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A target built from a closure.
pub struct FnTarget {
    input_dim: usize,
    output_dim: usize,
    f: TargetFn,
}

impl FnTarget {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            f: Box::new(f),
        }
    }

    /// Scalar-output convenience wrapper.
    pub fn scalar(input_dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(input_dim, 1, move |x| vec![f(x)])
    }
}

impl Target for FnTarget {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// One term of a sigmoidal sum: per output dimension `k`, the contribution
/// is `gain[k] · σ(weights[:,k]·x + bias[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    weights: Mat,
    bias: Vec<f64>,
    gain: Vec<f64>,
}

impl Term {
    pub fn new(weights: Mat, bias: Vec<f64>, gain: Vec<f64>) -> Result<Self> {
        let m = weights.cols();
        if bias.len() != m || gain.len() != m {
            return Err(Error::DimensionMismatch {
                context: "term parameter lengths",
                expected: m,
                got: bias.len().min(gain.len()),
            });
        }
        if !bias.iter().chain(&gain).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "term parameters",
            });
        }
        Ok(Self {
            weights,
            bias,
            gain,
        })
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    /// The term's value at `x`, one entry per output dimension.
    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        let m = self.weights.cols();
        (0..m)
            .map(|k| {
                let mut pre = self.bias[k];
                for (i, &xi) in x.iter().enumerate() {
                    pre += self.weights.get(i, k) * xi;
                }
                self.gain[k] * sigmoid(pre)
            })
            .collect()
    }
}

/// A finite sum of gained sigmoids approximating a function on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidalSum {
    input_dim: usize,
    output_dim: usize,
    terms: Vec<Term>,
}

impl SigmoidalSum {
    pub fn new(input_dim: usize, output_dim: usize, terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyModel);
        }
        for t in &terms {
            if t.weights.rows() != input_dim || t.weights.cols() != output_dim {
                return Err(Error::DimensionMismatch {
                    context: "term weight shape",
                    expected: input_dim * output_dim,
                    got: t.weights.rows() * t.weights.cols(),
                });
            }
        }
        Ok(Self {
            input_dim,
            output_dim,
            terms,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Evaluates the sum at a point.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "evaluation point",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.output_dim];
        for t in &self.terms {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// A copy keeping only the terms at the given indices, in order.
    pub fn retain(&self, keep: &[usize]) -> Result<SigmoidalSum> {
        if keep.is_empty() {
            return Err(Error::EmptyModel);
        }
        let terms = keep
            .iter()
            .map(|&j| {
                self.terms.get(j).cloned().ok_or(Error::InvalidParameter {
                    name: "keep",
                    message: format!("term index {j} out of range"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SigmoidalSum::new(self.input_dim, self.output_dim, terms)
    }
}

/// A hidden feature `σ(weights·x + bias)` shared by all output dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Feature {
    pub fn activation(&self, x: &[f64]) -> f64 {
        let mut pre = self.bias;
        for (w, &xi) in self.weights.iter().zip(x) {
            pre += w * xi;
        }
        sigmoid(pre)
    }
}

/// Default sampling scale for hidden weights: `4·N^{1/n}` for `N` terms in
/// `n` input dimensions, so richer sums get steeper sigmoids.
pub fn default_weight_scale(n_terms: usize, input_dim: usize) -> f64 {
    4.0 * (n_terms as f64).powf(1.0 / input_dim as f64)
}

/// Samples `n_terms` hidden features over the box.
///
/// Weights are uniform in `[-scale, scale]`; each bias is drawn so the
/// pre-activation crosses zero somewhere in the box. Draws are consumed
/// term by term, so with a fixed scale the first `k` features of a larger
/// request equal a `k`-term request from the same seed.
pub fn sample_features(
    domain: &DomainBox,
    n_terms: usize,
    scale: f64,
    rng: &mut Rng,
) -> Vec<Feature> {
    let n = domain.dim();
    (0..n_terms)
        .map(|_| {
            let weights: Vec<f64> = (0..n).map(|_| rng.uniform(-scale, scale)).collect();
            // Pre-activation range of weights·x over the box.
            let (mut lo, mut hi) = (0.0, 0.0);
            for ((w, &low), &high) in weights.iter().zip(domain.lower()).zip(domain.upper()) {
                let a = w * low;
                let b = w * high;
                lo += a.min(b);
                hi += a.max(b);
            }
            let bias = -rng.uniform(lo, hi);
            Feature { weights, bias }
        })
        .collect()
}

/// Solves the gains of a sigmoidal sum over fixed features by
/// ridge-regularized least squares on the box grid.
pub fn fit_alpha(
    features: &[Feature],
    target: &dyn Target,
    domain: &DomainBox,
    ridge: f64,
) -> Result<SigmoidalSum> {
    if features.is_empty() {
        return Err(Error::EmptyModel);
    }
    if target.input_dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            context: "target input dimension",
            expected: domain.dim(),
            got: target.input_dim(),
        });
    }
    let n = domain.dim();
    let m = target.output_dim();
    let n_points = domain.n_points();
    let n_terms = features.len();

    let mut design = Mat::zeros(n_points, n_terms);
    let mut values = Mat::zeros(n_points, m);
    for (p, x) in domain.points().enumerate() {
        for (j, f) in features.iter().enumerate() {
            design.set(p, j, f.activation(&x));
        }
        let y = target.eval(&x);
        for (k, &v) in y.iter().enumerate() {
            values.set(p, k, v);
        }
    }

    let alpha = ridge_lstsq(&design, &values, ridge)?;

    let terms = features
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let weights = Mat::from_fn(n, m, |i, _| f.weights[i])?;
            let bias = vec![f.bias; m];
            let gain = (0..m).map(|k| alpha.get(j, k)).collect();
            Term::new(weights, bias, gain)
        })
        .collect::<Result<Vec<_>>>()?;
    SigmoidalSum::new(n, m, terms)
}

/// Samples features at the default scale and fits the gains.
pub fn fit_random_features(
    target: &dyn Target,
    domain: &DomainBox,
    n_terms: usize,
    ridge: f64,
    rng: &mut Rng,
) -> Result<SigmoidalSum> {
    let scale = default_weight_scale(n_terms, domain.dim());
    let features = sample_features(domain, n_terms, scale, rng);
    fit_alpha(&features, target, domain, ridge)
}

/// Maximum over the box grid of `|G(x) − f(x)|`, across output dimensions.
pub fn sup_error(g: &SigmoidalSum, target: &dyn Target, domain: &DomainBox) -> Result<f64> {
    check_compat(g, target, domain)?;
    let mut worst = 0.0f64;
    for x in domain.points() {
        let gv = g.eval(&x)?;
        let fv = target.eval(&x);
        for (a, b) in gv.iter().zip(&fv) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Root-mean-square error over the box grid, across output dimensions.
pub fn grid_rmse(g: &SigmoidalSum, target: &dyn Target, domain: &DomainBox) -> Result<f64> {
    check_compat(g, target, domain)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for x in domain.points() {
        let gv = g.eval(&x)?;
        let fv = target.eval(&x);
        for (a, b) in gv.iter().zip(&fv) {
            let d = a - b;
            acc += d * d;
            count += 1;
        }
    }
    Ok((acc / count as f64).sqrt())
}

fn check_compat(g: &SigmoidalSum, target: &dyn Target, domain: &DomainBox) -> Result<()> {
    if g.input_dim() != domain.dim() || target.input_dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            context: "input dimension",
            expected: domain.dim(),
            got: g.input_dim().min(target.input_dim()),
        });
    }
    if g.output_dim() != target.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "output dimension",
            expected: target.output_dim(),
            got: g.output_dim(),
        });
    }
    Ok(())
}

/// Named example targets with their natural boxes.
pub mod targets {
    use super::{DomainBox, FnTarget, DEFAULT_GRID_RESOLUTION};
    use crate::mat::sigmoid;
    use std::f64::consts::TAU;

    /// A named target together with its default evaluation box.
    pub struct BuiltinTarget {
        pub name: &'static str,
        pub target: FnTarget,
        pub domain: DomainBox,
    }

    pub const NAMES: [&str; 5] = [
        "sin",
        "step-smooth",
        "gaussian-bump",
        "piecewise-linear",
        "product2d",
    ];

    /// Looks a target up by name; `None` for unknown names.
    pub fn builtin(name: &str) -> Option<BuiltinTarget> {
        let interval =
            |res: usize| DomainBox::new(vec![0.0], vec![1.0], vec![res]).expect("valid box");
        match name {
            "sin" => Some(BuiltinTarget {
                name: "sin",
                target: FnTarget::scalar(1, |x| (TAU * x[0]).sin()),
                domain: interval(DEFAULT_GRID_RESOLUTION),
            }),
            "step-smooth" => Some(BuiltinTarget {
                name: "step-smooth",
                target: FnTarget::scalar(1, |x| sigmoid(20.0 * (x[0] - 0.5))),
                domain: interval(DEFAULT_GRID_RESOLUTION),
            }),
            "gaussian-bump" => Some(BuiltinTarget {
                name: "gaussian-bump",
                target: FnTarget::scalar(1, |x| {
                    let d = x[0] - 0.5;
                    (-d * d / 0.02).exp()
                }),
                domain: interval(DEFAULT_GRID_RESOLUTION),
            }),
            "piecewise-linear" => Some(BuiltinTarget {
                name: "piecewise-linear",
                target: FnTarget::scalar(1, |x| 1.0 - (2.0 * x[0] - 1.0).abs()),
                domain: interval(DEFAULT_GRID_RESOLUTION),
            }),
            "product2d" => Some(BuiltinTarget {
                name: "product2d",
                target: FnTarget::scalar(2, |x| (TAU * x[0]).sin() * (TAU * x[1]).sin()),
                domain: DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![33, 33])
                    .expect("valid box"),
            }),
            _ => None,
        }
    }
}
