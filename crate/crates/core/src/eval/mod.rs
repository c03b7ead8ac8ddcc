//! Ranking metrics, multi-step dream evaluation, and PCA trajectory export.

pub mod pca;
pub mod ranking;
pub mod rollout_eval;

pub use pca::{pca_project, PcaProjection};
pub use ranking::{hits_at_1, mrr, rank_of, RankingInstance};
pub use rollout_eval::{dream_and_truth_latents, evaluate_rollout, EvalReport};
