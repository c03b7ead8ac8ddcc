//! JSON payloads the CLI writes and `plot` consumes.

use serde::{Deserialize, Serialize};

use cwm_core::puzzle::SuccessCurve;

/// Latent trajectories dumped by `eval` for plotting: per episode, the
/// dreamed rollout and the encoded ground truth, flattened per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajDump {
    pub horizon: usize,
    pub episodes: Vec<TrajEpisode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajEpisode {
    pub episode: usize,
    pub dream: Vec<Vec<f64>>,
    pub factual: Vec<Vec<f64>>,
}

/// Success curves emitted by `rank`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesFile {
    pub budget: usize,
    pub curves: Vec<SuccessCurve>,
}
