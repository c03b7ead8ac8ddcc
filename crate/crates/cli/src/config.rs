//! The run configuration file: one JSON document with sections for the
//! environment, dataset generation, training, evaluation, puzzles, and I/O
//! paths. Unknown keys anywhere are rejected. Command-line flags override
//! their corresponding fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cwm_core::model::{ModelConfig, ModelMode, TrainConfig};
use cwm_core::puzzle::PuzzleConfig;
use cwm_core::sim::EnvConfig;
use cwm_core::{CwmError, Result};

/// Which simulator feeds `gen`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenDomain {
    /// Free ball episodes with removal/displacement interventions.
    Balls,
    /// Puzzle scenes with a parked action ball displaced to a drop point.
    Puzzle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub domain: GenDomain,
    pub train_episodes: usize,
    pub test_episodes: usize,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            domain: GenDomain::Balls,
            train_episodes: 700,
            test_episodes: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: String,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dr_weight_clip: f64,
    /// Defaults to the dataset's ball count.
    pub k_slots: Option<usize>,
    pub latent_dim: usize,
    pub conv_channels: usize,
    pub hidden_dim: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            mode: "cwm".into(),
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            dr_weight_clip: t.dr_weight_clip,
            k_slots: None,
            latent_dim: m.latent_dim,
            conv_channels: m.conv_channels,
            hidden_dim: m.hidden_dim,
            gru_hidden: m.gru_hidden,
            gru_layers: m.gru_layers,
            gamma: m.gamma,
            sigma: m.sigma,
        }
    }
}

impl TrainSection {
    pub fn model_config(
        &self,
        mode: ModelMode,
        balls: usize,
        obs_channels: usize,
        resolution: usize,
    ) -> ModelConfig {
        ModelConfig {
            mode,
            k_slots: self.k_slots.unwrap_or(balls),
            latent_dim: self.latent_dim,
            obs_channels,
            resolution,
            conv_channels: self.conv_channels,
            hidden_dim: self.hidden_dim,
            gru_hidden: self.gru_hidden,
            gru_layers: self.gru_layers,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            dr_weight_clip: self.dr_weight_clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub horizon: usize,
    pub n_references: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            horizon: 10,
            n_references: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    /// Training history JSONL; stdout when unset.
    pub history_path: Option<PathBuf>,
    /// Latent trajectory dump written by `eval` when set.
    pub traj_path: Option<PathBuf>,
    /// Output directory for `rank`.
    pub rank_dir: PathBuf,
    /// Input consumed by `plot` when no positional argument is given.
    pub plot_input: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            train_dir: "data/train".into(),
            test_dir: "data/test".into(),
            model_path: "model.cwmp".into(),
            report_path: "eval.json".into(),
            history_path: None,
            traj_path: None,
            rank_dir: "rank".into(),
            plot_input: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub gen: GenSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub puzzle: PuzzleConfig,
    pub io: IoSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CwmError::Schema(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| CwmError::Schema(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.puzzle.validate()?;
        ModelMode::parse(&self.train.mode)?;
        if self.gen.train_episodes == 0 || self.gen.test_episodes == 0 {
            return Err(CwmError::Schema(
                "gen.train_episodes and gen.test_episodes must be positive".into(),
            ));
        }
        if self.eval.horizon == 0 || self.eval.n_references == 0 {
            return Err(CwmError::Schema(
                "eval.horizon and eval.n_references must be positive".into(),
            ));
        }
        self.train.train_config(self.seed).validate()?;
        Ok(())
    }
}
