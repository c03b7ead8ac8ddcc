//! Batched network forwards on a tape: extractor + encoder, graph transition,
//! and the recurrent confounder estimator.
//!
//! Row layout conventions: encoding a batch of B observations yields a
//! [B*K, d] latent matrix whose row (b*K + k) is slot k of observation b.
//! Batched transitions treat row (n*K + k) as slot k of item n.

use super::config::ModelConfig;
use super::params::TrainedModel;
use crate::diff::layers::{gru_cell, linear, GruLayerVars};
use crate::diff::{ParamSet, Tape, Tensor, Var};
use crate::error::{CwmError, Result};
use crate::sim::Observation;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy)]
pub struct MlpVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
    pub ln_g: Var,
    pub ln_b: Var,
    pub fc3_w: Var,
    pub fc3_b: Var,
}

/// All parameters of a model bound onto one tape as leaves.
pub struct NetVars {
    pub conv1_w: Var,
    pub conv1_b: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub conv2_w: Var,
    pub conv2_b: Var,
    pub enc: MlpVars,
    pub edge: MlpVars,
    pub node: MlpVars,
    pub gru: Vec<GruLayerVars>,
    /// Leaf vars in parameter-set order, for gradient extraction.
    pub all: Vec<Var>,
}

/// Insert every parameter as a leaf, in parameter-set order.
pub fn bind(tape: &mut Tape, model: &TrainedModel) -> Result<NetVars> {
    let all = (0..model.params.len())
        .map(|i| tape.leaf(model.params.tensor(i).clone()))
        .collect();
    wire(&model.params, &model.config, all)
}

/// Assemble the network handles from pre-inserted leaf vars (one per
/// parameter, in parameter-set order).
pub fn wire(params: &ParamSet, config: &ModelConfig, all: Vec<Var>) -> Result<NetVars> {
    if all.len() != params.len() {
        return Err(CwmError::Schema(format!(
            "{} vars for {} parameters",
            all.len(),
            params.len()
        )));
    }
    let var_of = |name: &str| -> Result<Var> {
        params
            .index_of(name)
            .map(|i| all[i])
            .ok_or_else(|| CwmError::Schema(format!("missing parameter {name}")))
    };
    let mlp_of = |prefix: &str| -> Result<MlpVars> {
        Ok(MlpVars {
            fc1_w: var_of(&format!("{prefix}.fc1.w"))?,
            fc1_b: var_of(&format!("{prefix}.fc1.b"))?,
            fc2_w: var_of(&format!("{prefix}.fc2.w"))?,
            fc2_b: var_of(&format!("{prefix}.fc2.b"))?,
            ln_g: var_of(&format!("{prefix}.ln.g"))?,
            ln_b: var_of(&format!("{prefix}.ln.b"))?,
            fc3_w: var_of(&format!("{prefix}.fc3.w"))?,
            fc3_b: var_of(&format!("{prefix}.fc3.b"))?,
        })
    };

    let mut gru = Vec::new();
    if config.mode.uses_confounders() {
        for layer in 0..config.gru_layers {
            let p = format!("gru{layer}");
            gru.push(GruLayerVars {
                wxr: var_of(&format!("{p}.wxr"))?,
                whr: var_of(&format!("{p}.whr"))?,
                br: var_of(&format!("{p}.br"))?,
                wxz: var_of(&format!("{p}.wxz"))?,
                whz: var_of(&format!("{p}.whz"))?,
                bz: var_of(&format!("{p}.bz"))?,
                wxn: var_of(&format!("{p}.wxn"))?,
                whn: var_of(&format!("{p}.whn"))?,
                bn: var_of(&format!("{p}.bn"))?,
            });
        }
    }

    Ok(NetVars {
        conv1_w: var_of("ext.conv1.w")?,
        conv1_b: var_of("ext.conv1.b")?,
        ln1_g: var_of("ext.ln1.g")?,
        ln1_b: var_of("ext.ln1.b")?,
        conv2_w: var_of("ext.conv2.w")?,
        conv2_b: var_of("ext.conv2.b")?,
        enc: mlp_of("enc")?,
        edge: mlp_of("trans.edge")?,
        node: mlp_of("trans.node")?,
        gru,
        all,
    })
}

/// Stack observations into a [B, C, H, W] input tensor.
pub fn obs_to_tensor(obs: &[&Observation]) -> Result<Tensor> {
    let first = obs
        .first()
        .ok_or_else(|| CwmError::Schema("empty observation batch".into()))?;
    let (c, r) = (first.channels, first.resolution);
    let mut data = Vec::with_capacity(obs.len() * c * r * r);
    for o in obs {
        if o.channels != c || o.resolution != r {
            return Err(CwmError::Schema(
                "observation batch has mixed shapes".into(),
            ));
        }
        data.extend(o.grid.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![obs.len(), c, r, r], data)
}

/// Encoder MLP (and the shared shape of edge/node MLPs):
/// fc -> relu -> fc -> relu -> layer norm -> fc.
pub fn mlp_forward(tape: &mut Tape, x: Var, p: &MlpVars) -> Result<Var> {
    let h1 = linear(tape, x, p.fc1_w, p.fc1_b)?;
    let h1 = tape.relu(h1)?;
    let h2 = linear(tape, h1, p.fc2_w, p.fc2_b)?;
    let h2 = tape.relu(h2)?;
    let h2 = tape.layer_norm(h2, p.ln_g, p.ln_b)?;
    linear(tape, h2, p.fc3_w, p.fc3_b)
}

/// Object extractor plus encoder: observations [B, C, H, W] to slot latents
/// [B*K, d].
pub fn encode_batch(tape: &mut Tape, net: &NetVars, cfg: &ModelConfig, obs: Var) -> Result<Var> {
    let shape = tape.value(obs).shape().to_vec();
    if shape.len() != 4 {
        return Err(CwmError::Schema(format!(
            "encode expects [B, C, H, W], got {shape:?}"
        )));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c != cfg.extractor_channels() {
        return Err(CwmError::Schema(format!(
            "encode: {} channels for a model expecting {}",
            c,
            cfg.extractor_channels()
        )));
    }
    if h != cfg.resolution || w != cfg.resolution {
        return Err(CwmError::Schema(format!(
            "encode: resolution {h}x{w} for a model expecting {}",
            cfg.resolution
        )));
    }

    let f = cfg.conv_channels;
    let c1 = tape.conv2d(obs, net.conv1_w, net.conv1_b, 1, 4)?;
    let a1 = tape.leaky_relu(c1, LEAKY_SLOPE)?;

    // Layer norm across channels at every spatial position.
    let flat = tape.reshape(a1, &[b, f, h * w])?;
    let swapped = tape.batch_transpose(flat)?;
    let rows = tape.reshape(swapped, &[b * h * w, f])?;
    let normed = tape.layer_norm(rows, net.ln1_g, net.ln1_b)?;
    let back = tape.reshape(normed, &[b, h * w, f])?;
    let unswapped = tape.batch_transpose(back)?;
    let spatial = tape.reshape(unswapped, &[b, f, h, w])?;

    let c2 = tape.conv2d(spatial, net.conv2_w, net.conv2_b, 5, 0)?;
    let maps = tape.sigmoid(c2)?;

    let side = cfg.feature_side();
    let per_slot = tape.reshape(maps, &[b * cfg.k_slots, side * side])?;
    mlp_forward(tape, per_slot, &net.enc)
}

/// Graph-network transition over batched slot inputs.
///
/// `slot_inputs` is [N*K, slot_in] where slot_in already includes the
/// confounder estimate when the mode uses one. Returns deltas [N*K, d]
/// computed as node updates over summed pairwise edge messages.
pub fn transition_batch(
    tape: &mut Tape,
    net: &NetVars,
    cfg: &ModelConfig,
    slot_inputs: Var,
    n_items: usize,
) -> Result<Var> {
    let k = cfg.k_slots;
    let rows = tape.value(slot_inputs).shape()[0];
    if rows != n_items * k {
        return Err(CwmError::Schema(format!(
            "transition: {rows} rows for {n_items} items of {k} slots"
        )));
    }

    let agg = if k == 1 {
        tape.leaf(Tensor::zeros(&[n_items, cfg.latent_dim]))
    } else {
        let mut idx_src = Vec::with_capacity(n_items * k * (k - 1));
        let mut idx_dst = Vec::with_capacity(idx_src.capacity());
        let mut groups = Vec::with_capacity(idx_src.capacity());
        for item in 0..n_items {
            for j in 0..k {
                for i in 0..k {
                    if i != j {
                        idx_src.push(item * k + i);
                        idx_dst.push(item * k + j);
                        groups.push(item * k + j);
                    }
                }
            }
        }
        let left = tape.gather_rows(slot_inputs, &idx_src)?;
        let right = tape.gather_rows(slot_inputs, &idx_dst)?;
        let pair_in = tape.concat(&[left, right], 1)?;
        let messages = mlp_forward(tape, pair_in, &net.edge)?;
        tape.sum_groups(messages, &groups, n_items * k)?
    };

    let node_in = tape.concat(&[slot_inputs, agg], 1)?;
    mlp_forward(tape, node_in, &net.node)
}

/// Run the stacked GRU over a sequence of [R, d] steps and return the final
/// hidden state [R, gru_hidden] of the last layer.
pub fn gru_forward(
    tape: &mut Tape,
    net: &NetVars,
    cfg: &ModelConfig,
    steps: &[Var],
) -> Result<Var> {
    if net.gru.is_empty() {
        return Err(CwmError::Schema(
            "confounder estimator unavailable in wm mode".into(),
        ));
    }
    if steps.is_empty() {
        return Err(CwmError::Schema("empty sequence for the estimator".into()));
    }
    let rows = tape.value(steps[0]).shape()[0];
    let mut inputs: Vec<Var> = steps.to_vec();
    let mut last = None;
    for layer in &net.gru {
        let mut h = tape.leaf(Tensor::zeros(&[rows, cfg.gru_hidden]));
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            h = gru_cell(tape, x, h, layer)?;
            outputs.push(h);
        }
        last = Some(h);
        inputs = outputs;
    }
    Ok(last.expect("at least one layer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelMode;
    use crate::sim::WorldState;

    fn tiny_model(mode: ModelMode, k: usize) -> TrainedModel {
        TrainedModel::init(
            ModelConfig {
                mode,
                k_slots: k,
                obs_channels: k + 1,
                resolution: 15,
                conv_channels: 4,
                hidden_dim: 16,
                gru_hidden: 6,
                ..ModelConfig::default()
            },
            7,
        )
        .unwrap()
    }

    fn obs_for(k: usize, seed: u64) -> Observation {
        let mut rng = crate::rng::Stream::new(seed);
        let positions = (0..k)
            .map(|_| [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)])
            .collect();
        let state = WorldState {
            positions,
            velocities: vec![[0.0, 0.0]; k],
            radii: vec![0.07; k],
            alive: vec![true; k],
        };
        crate::sim::render(&state, 15).unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let model = tiny_model(ModelMode::Cwm, 2);
        let obs = obs_for(2, 1);
        let mut tape = Tape::new();
        let net = bind(&mut tape, &model).unwrap();
        let x = obs_to_tensor(&[&obs, &obs]).unwrap();
        let xv = tape.leaf(x);
        let lat = encode_batch(&mut tape, &net, &model.config, xv).unwrap();
        assert_eq!(tape.value(lat).shape(), &[4, 4]);
        // identical observations encode identically
        let v = tape.value(lat).data();
        assert_eq!(&v[0..8], &v[8..16]);
    }

    #[test]
    fn encode_rejects_wrong_resolution() {
        let model = tiny_model(ModelMode::Cwm, 2);
        let mut tape = Tape::new();
        let net = bind(&mut tape, &model).unwrap();
        let x = tape.leaf(Tensor::zeros(&[1, 3, 16, 16]));
        assert!(matches!(
            encode_batch(&mut tape, &net, &model.config, x),
            Err(CwmError::Schema(_))
        ));
    }

    #[test]
    fn single_slot_transition_uses_zero_messages() {
        let model = tiny_model(ModelMode::Cwm, 1);
        let mut tape = Tape::new();
        let net = bind(&mut tape, &model).unwrap();
        let slot_in = tape.leaf(Tensor::filled(&[1, model.config.slot_input_dim()], 0.3));
        let delta = transition_batch(&mut tape, &net, &model.config, slot_in, 1).unwrap();
        assert_eq!(tape.value(delta).shape(), &[1, model.config.latent_dim]);
    }

    #[test]
    fn gru_forward_width() {
        let model = tiny_model(ModelMode::Cwm, 2);
        let mut tape = Tape::new();
        let net = bind(&mut tape, &model).unwrap();
        let steps: Vec<Var> = (0..5)
            .map(|t| tape.leaf(Tensor::filled(&[2, 4], t as f64 * 0.1)))
            .collect();
        let u = gru_forward(&mut tape, &net, &model.config, &steps).unwrap();
        assert_eq!(tape.value(u).shape(), &[2, 6]);
    }
}
