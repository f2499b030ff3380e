//! Explicit matrix-vector views of transformer sublayers.
//!
//! The crate lowers the two shape-preserving sublayers of a transformer
//! block — the square linear map and multi-head attention — into single
//! `NM×NM` matrices acting on a flattened input vector, checks the
//! lowerings against plain reference forward passes, and builds on the
//! resulting single-matrix view: sigmoidal-sum function approximation,
//! magnitude pruning with explicit deviation bounds, and low-rank weight
//! amendment.

pub mod diamond;
pub mod error;
pub mod flatten;
pub mod linalg;
pub mod lora;
pub mod lowering;
pub mod mat;
pub mod model;
pub mod prune;
pub mod rng;
pub mod transformer;
pub mod uat;

pub use error::{Error, Result};
pub use flatten::{flatten, unflatten, FlatVec};
pub use lora::{fit_als, lowered_amendment_gap, merge, AlsReport, LowRankUpdate};
pub use lowering::{
    attention_rows, compose, density_report, head_slice, lower_linear, lower_mha, DensityReport,
    LoweredOp, OpKind, MAX_LOWERED_SIZE,
};
pub use mat::{sigmoid, softmax_rows, Mat};
pub use prune::{
    prune_entries, prune_terms, score_terms, threshold_at_percentile, EntryPruneReport, PruneReport,
};
pub use rng::Rng;
pub use transformer::{
    linear_forward, mha_forward, split_heads, AttnConfig, HeadWeights, LinearLayer, MhaLayer,
    MhaParams, ScaleRoot,
};
pub use uat::{
    fit_alpha, fit_random_features, grid_rmse, sample_features, sup_error, DomainBox, Feature,
    FnTarget, SigmoidalSum, Target, Term,
};

// The guide's code blocks run as doc-tests so the book cannot drift from
// the library. mdbook renders the same files from book/.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/matrices.md")]
    mod matrices {}
    #[doc = include_str!("../../../book/src/diamond.md")]
    mod diamond {}
    #[doc = include_str!("../../../book/src/lowering-linear.md")]
    mod lowering_linear {}
    #[doc = include_str!("../../../book/src/lowering-attention.md")]
    mod lowering_attention {}
    #[doc = include_str!("../../../book/src/sigmoidal-sums.md")]
    mod sigmoidal_sums {}
    #[doc = include_str!("../../../book/src/pruning.md")]
    mod pruning {}
    #[doc = include_str!("../../../book/src/low-rank-updates.md")]
    mod low_rank_updates {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
