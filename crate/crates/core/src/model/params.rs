//! Parameter snapshots: construction, naming scheme, and shape validation.
//!
//! Parameter names are stable and positional order is fixed by construction,
//! so optimizer state and serialized snapshots line up across runs.

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use crate::diff::{ParamBuilder, ParamSet};
use crate::error::{CwmError, Result};

/// Training provenance stored with a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub train_config: TrainConfig,
    pub epochs_completed: usize,
    pub seed: u64,
}

impl TrainMeta {
    pub fn untrained(seed: u64) -> Self {
        Self {
            train_config: TrainConfig::default(),
            epochs_completed: 0,
            seed,
        }
    }
}

/// A parameter snapshot plus its architecture and training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub meta: TrainMeta,
}

/// The (name, shape) schedule implied by a config, in canonical order.
pub fn param_schedule(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let in_ch = cfg.extractor_channels();
    let f = cfg.conv_channels;
    let k = cfg.k_slots;
    let d = cfg.latent_dim;
    let hid = cfg.hidden_dim;
    let slot_in = cfg.slot_input_dim();

    out.push(("ext.conv1.w".into(), vec![f, in_ch, 9, 9]));
    out.push(("ext.conv1.b".into(), vec![f]));
    out.push(("ext.ln1.g".into(), vec![f]));
    out.push(("ext.ln1.b".into(), vec![f]));
    out.push(("ext.conv2.w".into(), vec![k, f, 5, 5]));
    out.push(("ext.conv2.b".into(), vec![k]));

    let mlp = |prefix: &str, input: usize, output: usize, out: &mut Vec<(String, Vec<usize>)>| {
        out.push((format!("{prefix}.fc1.w"), vec![input, hid]));
        out.push((format!("{prefix}.fc1.b"), vec![hid]));
        out.push((format!("{prefix}.fc2.w"), vec![hid, hid]));
        out.push((format!("{prefix}.fc2.b"), vec![hid]));
        out.push((format!("{prefix}.ln.g"), vec![hid]));
        out.push((format!("{prefix}.ln.b"), vec![hid]));
        out.push((format!("{prefix}.fc3.w"), vec![hid, output]));
        out.push((format!("{prefix}.fc3.b"), vec![output]));
    };

    mlp("enc", cfg.slot_feature_dim(), d, &mut out);
    mlp("trans.edge", 2 * slot_in, d, &mut out);
    mlp("trans.node", slot_in + d, d, &mut out);

    if cfg.mode.uses_confounders() {
        for layer in 0..cfg.gru_layers {
            let input = if layer == 0 { d } else { cfg.gru_hidden };
            for gate in ["r", "z", "n"] {
                out.push((format!("gru{layer}.wx{gate}"), vec![input, cfg.gru_hidden]));
                out.push((format!("gru{layer}.wh{gate}"), vec![cfg.gru_hidden, cfg.gru_hidden]));
                out.push((format!("gru{layer}.b{gate}"), vec![cfg.gru_hidden]));
            }
        }
    }
    out
}

impl TrainedModel {
    /// Fresh snapshot with seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new(seed);
        let in_ch = config.extractor_channels();
        let k = config.k_slots;
        let d = config.latent_dim;
        let hid = config.hidden_dim;
        let slot_in = config.slot_input_dim();

        b.conv("ext.conv1", in_ch, config.conv_channels, 9);
        b.layer_norm("ext.ln1", config.conv_channels);
        b.conv("ext.conv2", config.conv_channels, k, 5);

        let mlp = |b: &mut ParamBuilder, prefix: &str, input: usize, output: usize| {
            b.linear(&format!("{prefix}.fc1"), input, hid);
            b.linear(&format!("{prefix}.fc2"), hid, hid);
            b.layer_norm(&format!("{prefix}.ln"), hid);
            b.linear(&format!("{prefix}.fc3"), hid, output);
        };
        mlp(&mut b, "enc", config.slot_feature_dim(), d);
        mlp(&mut b, "trans.edge", 2 * slot_in, d);
        mlp(&mut b, "trans.node", slot_in + d, d);

        if config.mode.uses_confounders() {
            for layer in 0..config.gru_layers {
                let input = if layer == 0 { d } else { config.gru_hidden };
                b.gru_layer(&format!("gru{layer}"), input, config.gru_hidden);
            }
        }

        let model = Self {
            config,
            params: b.finish(),
            meta: TrainMeta::untrained(seed),
        };
        model.validate_shapes()?;
        Ok(model)
    }

    /// Check that the parameter set matches the schedule implied by the
    /// config, name for name and shape for shape.
    pub fn validate_shapes(&self) -> Result<()> {
        let schedule = param_schedule(&self.config);
        if schedule.len() != self.params.len() {
            return Err(CwmError::Schema(format!(
                "parameter count {} does not match architecture ({})",
                self.params.len(),
                schedule.len()
            )));
        }
        for (i, (name, shape)) in schedule.iter().enumerate() {
            if self.params.name(i) != name {
                return Err(CwmError::Schema(format!(
                    "parameter {i} is {}, expected {name}",
                    self.params.name(i)
                )));
            }
            if self.params.tensor(i).shape() != shape.as_slice() {
                return Err(CwmError::Schema(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    self.params.tensor(i).shape()
                )));
            }
        }
        Ok(())
    }

    /// Zero every transition parameter, making the predicted delta
    /// identically zero. Test and diagnostics helper.
    pub fn zero_transition(&mut self) {
        for i in 0..self.params.len() {
            if self.params.name(i).starts_with("trans.") {
                self.params.tensor_mut(i).data_mut().fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelMode;

    fn tiny(mode: ModelMode) -> ModelConfig {
        ModelConfig {
            mode,
            k_slots: 2,
            obs_channels: 3,
            resolution: 15,
            conv_channels: 4,
            hidden_dim: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn wm_has_no_gru_parameters() {
        let m = TrainedModel::init(tiny(ModelMode::Wm), 0).unwrap();
        assert!(m.params.iter().all(|(n, _)| !n.starts_with("gru")));
        let c = TrainedModel::init(tiny(ModelMode::Cwm), 0).unwrap();
        assert!(c.params.iter().any(|(n, _)| n.starts_with("gru0")));
        assert!(c.params.iter().any(|(n, _)| n.starts_with("gru1")));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = TrainedModel::init(tiny(ModelMode::Cwm), 5).unwrap();
        let b = TrainedModel::init(tiny(ModelMode::Cwm), 5).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn schedule_matches_init() {
        for mode in [ModelMode::Wm, ModelMode::Cwm, ModelMode::CrmCwm] {
            let m = TrainedModel::init(tiny(mode), 3).unwrap();
            m.validate_shapes().unwrap();
        }
    }
}
