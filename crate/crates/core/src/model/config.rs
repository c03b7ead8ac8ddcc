//! Model and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};

/// Which model family the parameters implement.
///
/// `Wm` is the confounder-free baseline: it consumes the channel-wise
/// concatenation of a factual and a counterfactual observation and has no
/// confounder estimator. `Cwm` adds the recurrent confounder estimator whose
/// output is concatenated onto every slot before the transition. `CrmCwm` is
/// a `Cwm` trained with the doubly robust objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    Wm,
    Cwm,
    CrmCwm,
}

impl ModelMode {
    pub fn uses_confounders(&self) -> bool {
        !matches!(self, ModelMode::Wm)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wm" => Ok(ModelMode::Wm),
            "cwm" => Ok(ModelMode::Cwm),
            "crm-cwm" => Ok(ModelMode::CrmCwm),
            other => Err(CwmError::Schema(format!(
                "unknown mode {other:?} (expected wm, cwm, or crm-cwm)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelMode::Wm => write!(f, "wm"),
            ModelMode::Cwm => write!(f, "cwm"),
            ModelMode::CrmCwm => write!(f, "crm-cwm"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Object slots K.
    pub k_slots: usize,
    /// Latent width d per slot.
    pub latent_dim: usize,
    /// Channels of a single rendered observation (balls + background).
    pub obs_channels: usize,
    pub resolution: usize,
    /// Feature maps in the first extractor convolution.
    pub conv_channels: usize,
    /// Hidden width of the encoder / edge / node MLPs.
    pub hidden_dim: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// Hinge margin.
    pub gamma: f64,
    /// Distance scale: energies multiply squared distances by 0.5 / sigma^2.
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Cwm,
            k_slots: 2,
            latent_dim: 4,
            obs_channels: 3,
            resolution: 50,
            conv_channels: 32,
            hidden_dim: 512,
            gru_hidden: 32,
            gru_layers: 2,
            gamma: 1.0,
            sigma: 0.5,
        }
    }
}

impl ModelConfig {
    /// Channels entering the extractor; the baseline sees observation pairs.
    pub fn extractor_channels(&self) -> usize {
        match self.mode {
            ModelMode::Wm => 2 * self.obs_channels,
            _ => self.obs_channels,
        }
    }

    /// Side length of a slot feature map after the second convolution
    /// (5x5 kernel, stride 5, no padding).
    pub fn feature_side(&self) -> usize {
        (self.resolution - 5) / 5 + 1
    }

    /// Flattened per-slot feature dimension entering the encoder MLP.
    pub fn slot_feature_dim(&self) -> usize {
        let s = self.feature_side();
        s * s
    }

    /// Per-slot transition input width: latent plus estimated confounder.
    pub fn slot_input_dim(&self) -> usize {
        if self.mode.uses_confounders() {
            self.latent_dim + self.gru_hidden
        } else {
            self.latent_dim
        }
    }

    /// Energy scale 0.5 / sigma^2 applied to squared distances.
    pub fn distance_scale(&self) -> f64 {
        0.5 / (self.sigma * self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CwmError::Schema(m));
        if self.k_slots == 0 {
            return fail("k_slots must be positive".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        if self.obs_channels < 2 {
            return fail("obs_channels must include at least one ball and background".into());
        }
        if self.resolution < 8 {
            return fail(format!("resolution must be >= 8, got {}", self.resolution));
        }
        if self.conv_channels == 0 || self.hidden_dim == 0 {
            return fail("network widths must be positive".into());
        }
        if self.mode.uses_confounders() && (self.gru_hidden == 0 || self.gru_layers == 0) {
            return fail("confounder estimator needs positive width and depth".into());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return fail("gamma must be positive".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return fail("sigma must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Cap on the inverse-propensity weight in the doubly robust objective.
    pub dr_weight_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 25,
            epochs: 200,
            seed: 0,
            dr_weight_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CwmError::Schema("lr must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CwmError::Schema(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.dr_weight_clip.is_finite() && self.dr_weight_clip >= 1.0) {
            return Err(CwmError::Schema("dr_weight_clip must be >= 1".into()));
        }
        Ok(())
    }
}
