//! Deterministic 2D ball physics with hidden confounders, do-interventions,
//! episode-pair generation, and grid rasterization.

pub mod config;
pub mod episode;
pub mod intervention;
pub mod render;
pub mod world;

pub use config::{Arena, EnvConfig, GravityConfig, InterventionMix};
pub use episode::{generate_episode_pair, EpisodePair};
pub use intervention::{apply_intervention, apply_intervention_in, Intervention};
pub use render::{render, Observation};
pub use world::{step_world, step_world_events, Confounders, StepEvents, WorldState};
