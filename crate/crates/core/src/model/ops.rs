//! Public model operations on single instances: encoding, transition,
//! combination, confounder estimation, dream rollout, and the hinge loss.

use super::config::ModelConfig;
use super::forward::{bind, encode_batch, gru_forward, obs_to_tensor, transition_batch};
use super::latent::{ConfounderEstimate, LatentSlots};
use super::loss::hinge_objective;
use super::params::TrainedModel;
use crate::diff::{Tape, Tensor, Var};
use crate::error::{CwmError, Result};
use crate::sim::Observation;

/// Map an observation to K slot latents.
pub fn encode(obs: &Observation, model: &TrainedModel) -> Result<LatentSlots> {
    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;
    let x = obs_to_tensor(&[obs])?;
    let xv = tape.leaf(x);
    let lat = encode_batch(&mut tape, &net, &model.config, xv)?;
    LatentSlots::new(tape.value(lat).clone())
}

/// Encode many observations without keeping the tapes around.
pub fn encode_values(model: &TrainedModel, obs: &[&Observation]) -> Result<Vec<LatentSlots>> {
    const CHUNK: usize = 64;
    let k = model.config.k_slots;
    let d = model.config.latent_dim;
    let mut out = Vec::with_capacity(obs.len());
    for chunk in obs.chunks(CHUNK) {
        let mut tape = Tape::new();
        let net = bind(&mut tape, model)?;
        let x = obs_to_tensor(chunk)?;
        let xv = tape.leaf(x);
        let lat = encode_batch(&mut tape, &net, &model.config, xv)?;
        let data = tape.value(lat).data();
        for i in 0..chunk.len() {
            let rows = data[i * k * d..(i + 1) * k * d].to_vec();
            out.push(LatentSlots::new(Tensor::new(vec![k, d], rows)?)?);
        }
    }
    Ok(out)
}

fn check_slots(s: &LatentSlots, cfg: &ModelConfig, what: &str) -> Result<()> {
    if s.k_slots() != cfg.k_slots || s.dim() != cfg.latent_dim {
        return Err(CwmError::Schema(format!(
            "{what}: latent shape [{}, {}] for a model with [{}, {}]",
            s.k_slots(),
            s.dim(),
            cfg.k_slots,
            cfg.latent_dim
        )));
    }
    Ok(())
}

fn check_estimate(u: &ConfounderEstimate, cfg: &ModelConfig) -> Result<()> {
    if u.k_slots() != cfg.k_slots || u.width() != cfg.gru_hidden {
        return Err(CwmError::Schema(format!(
            "confounder estimate shape [{}, {}] for a model with [{}, {}]",
            u.k_slots(),
            u.width(),
            cfg.k_slots,
            cfg.gru_hidden
        )));
    }
    Ok(())
}

/// Per-slot transition input: the latent, concatenated with the confounder
/// estimate when the mode uses one.
pub(crate) fn slot_input_tensor(
    s: &LatentSlots,
    u: Option<&ConfounderEstimate>,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    match (cfg.mode.uses_confounders(), u) {
        (true, Some(u)) => {
            check_estimate(u, cfg)?;
            let k = cfg.k_slots;
            let width = cfg.slot_input_dim();
            let mut data = Vec::with_capacity(k * width);
            for slot in 0..k {
                data.extend_from_slice(s.slot(slot));
                data.extend_from_slice(u.slot(slot));
            }
            Tensor::new(vec![k, width], data)
        }
        (false, None) => Ok(s.tensor().clone()),
        (true, None) => Err(CwmError::Schema(
            "this mode requires a confounder estimate".into(),
        )),
        (false, Some(_)) => Err(CwmError::Schema(
            "wm mode takes no confounder estimate".into(),
        )),
    }
}

/// Predicted per-slot update from the graph transition.
pub fn transition_delta(
    s: &LatentSlots,
    u: Option<&ConfounderEstimate>,
    model: &TrainedModel,
) -> Result<LatentSlots> {
    check_slots(s, &model.config, "transition_delta")?;
    let inputs = slot_input_tensor(s, u, &model.config)?;
    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;
    let iv = tape.leaf(inputs);
    let delta = transition_batch(&mut tape, &net, &model.config, iv, 1)?;
    LatentSlots::new(tape.value(delta).clone())
}

/// Combination function: elementwise sum of state and update.
pub fn combine(s: &LatentSlots, delta: &LatentSlots) -> Result<LatentSlots> {
    if s.k_slots() != delta.k_slots() || s.dim() != delta.dim() {
        return Err(CwmError::Schema(format!(
            "combine: [{}, {}] + [{}, {}]",
            s.k_slots(),
            s.dim(),
            delta.k_slots(),
            delta.dim()
        )));
    }
    let data = s
        .flat()
        .iter()
        .zip(delta.flat())
        .map(|(a, b)| a + b)
        .collect();
    LatentSlots::new(Tensor::new(vec![s.k_slots(), s.dim()], data)?)
}

/// Run the per-slot GRU over a latent trajectory and keep the last hidden
/// state of each slot as its confounder estimate.
pub fn estimate_confounders(
    latent_traj: &[LatentSlots],
    model: &TrainedModel,
) -> Result<ConfounderEstimate> {
    let cfg = &model.config;
    if !cfg.mode.uses_confounders() {
        return Err(CwmError::Schema(
            "wm mode has no confounder estimator".into(),
        ));
    }
    if latent_traj.len() < 2 {
        return Err(CwmError::Schema(format!(
            "estimator needs a trajectory of length >= 2, got {}",
            latent_traj.len()
        )));
    }
    for s in latent_traj {
        check_slots(s, cfg, "estimate_confounders")?;
    }
    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;
    let steps: Vec<Var> = latent_traj
        .iter()
        .map(|s| tape.leaf(s.tensor().clone()))
        .collect();
    let u = gru_forward(&mut tape, &net, cfg, &steps)?;
    ConfounderEstimate::new(tape.value(u).clone())
}

/// The observation a baseline model consumes: factual and counterfactual
/// frames concatenated channel-wise, factual first.
pub fn paired_observation(factual: &Observation, cf: &Observation) -> Result<Observation> {
    factual.concat_channels(cf)
}

/// Dream rollout: estimate the confounders from the factual branch (or pair
/// the initial frames in wm mode), encode the intervened initial observation,
/// and iterate the latent transition. Returns the `horizon` successor states,
/// excluding the encoded start.
pub fn rollout_dream(
    cf_obs0: &Observation,
    factual_obs: &[Observation],
    horizon: usize,
    model: &TrainedModel,
) -> Result<Vec<LatentSlots>> {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;

    let (u_rows, start_obs): (Option<Var>, Observation) = if cfg.mode.uses_confounders() {
        if factual_obs.len() < 2 {
            return Err(CwmError::Schema(
                "dream rollout needs a factual trajectory of length >= 2".into(),
            ));
        }
        let refs: Vec<&Observation> = factual_obs.iter().collect();
        let x = obs_to_tensor(&refs)?;
        let xv = tape.leaf(x);
        let lat = encode_batch(&mut tape, &net, cfg, xv)?;
        let k = cfg.k_slots;
        let steps: Vec<Var> = (0..factual_obs.len())
            .map(|t| {
                let idx: Vec<usize> = (0..k).map(|s| t * k + s).collect();
                tape.gather_rows(lat, &idx)
            })
            .collect::<Result<_>>()?;
        let u = gru_forward(&mut tape, &net, cfg, &steps)?;
        (Some(u), cf_obs0.clone())
    } else {
        let first = factual_obs.first().ok_or_else(|| {
            CwmError::Schema("wm rollout needs the initial factual observation".into())
        })?;
        (None, paired_observation(first, cf_obs0)?)
    };

    let x0 = obs_to_tensor(&[&start_obs])?;
    let x0v = tape.leaf(x0);
    let mut current = encode_batch(&mut tape, &net, cfg, x0v)?;

    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let slot_in = match u_rows {
            Some(u) => tape.concat(&[current, u], 1)?,
            None => current,
        };
        let delta = transition_batch(&mut tape, &net, cfg, slot_in, 1)?;
        current = tape.add(current, delta)?;
        out.push(LatentSlots::new(tape.value(current).clone())?);
    }
    Ok(out)
}

/// Contrastive hinge loss for one transition:
/// H + max(0, gamma - H~) with H the energy of the predicted next state and
/// H~ the energy of a corrupted (negative) state.
pub fn hinge_loss(
    s_t: &LatentSlots,
    s_next: &LatentSlots,
    s_neg: &LatentSlots,
    u: Option<&ConfounderEstimate>,
    model: &TrainedModel,
) -> Result<f64> {
    let cfg = &model.config;
    check_slots(s_t, cfg, "hinge_loss")?;
    check_slots(s_next, cfg, "hinge_loss")?;
    check_slots(s_neg, cfg, "hinge_loss")?;

    let inputs = slot_input_tensor(s_t, u, cfg)?;
    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;
    let iv = tape.leaf(inputs);
    let delta = transition_batch(&mut tape, &net, cfg, iv, 1)?;
    let s_t_var = tape.leaf(s_t.tensor().clone());
    let pred = tape.add(s_t_var, delta)?;
    let next_var = tape.leaf(s_next.tensor().clone());
    let neg_var = tape.leaf(s_neg.tensor().clone());
    let loss = hinge_objective(
        &mut tape,
        pred,
        next_var,
        neg_var,
        1,
        cfg.k_slots,
        cfg.gamma,
        cfg.distance_scale(),
    )?;
    Ok(tape.value(loss).item())
}
