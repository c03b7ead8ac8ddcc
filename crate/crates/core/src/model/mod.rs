//! Latent world models: object extractor and encoder, graph-network
//! transition, recurrent confounder estimator, dream rollout, and the
//! contrastive and doubly robust training objectives.

pub mod config;
pub mod dr;
pub mod forward;
pub mod latent;
mod loss;
pub mod ops;
pub mod params;
pub mod propensity;
pub mod train;

pub use config::{ModelConfig, ModelMode, TrainConfig};
pub use dr::{dr_loss, dr_predict, DrSample};
pub use latent::{ConfounderEstimate, LatentSlots};
pub use ops::{
    combine, encode, encode_values, estimate_confounders, hinge_loss, paired_observation,
    rollout_dream, transition_delta,
};
pub use params::{TrainMeta, TrainedModel};
pub use propensity::{fit_propensity, PropensityModel};
pub use train::{train, EpochStats};
