//! Attention patterns, dataset curation and evaluation metrics for
//! multi-shot video generation.
//!
//! * [`layout`]: shot/frame/token geometry and summary-token selection.
//! * [`attention`]: dense masked attention reference and FLOP convention.
//! * [`window`]: per-shot windowed text cross-attention.
//! * [`sparse`]: sparse inter-shot self-attention over packed segments.
//! * [`curation`]: cut detection, filtering, sample assembly, prompt format.
//! * [`metrics`]: Shot Cut Accuracy and consistency scores.
//! * [`bench`]: scaling benchmark and randomized equivalence harness.

pub mod attention;
pub mod bench;
pub mod curation;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod packed;
pub mod sparse;
pub mod window;

pub use attention::{dense_flops, masked_dense_attention, stable_softmax, BoolMask, Matrix, Scalar};
pub use error::{Error, Result};
pub use layout::{ShotSpec, SummaryStrategy, TokenLayout};
pub use metrics::{shot_cut_accuracy, CutList, PenaltyPolicy, ScaReport};
pub use packed::PackedKv;
pub use sparse::{
    pack_varlen, plan_to_dense_mask, sparse_flops, sparse_self_attention, FlopReport, PlanMode,
    SparsePlan,
};
pub use window::{build_cross_mask, window_cross_attention, PromptLayout};
