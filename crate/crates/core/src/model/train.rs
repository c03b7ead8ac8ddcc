//! Training loop for the three model variants.
//!
//! Each batch encodes the counterfactual-branch observation pairs of its
//! episodes as positive transitions, estimates the confounders from the
//! factual branch (cwm modes), draws one negative observation per transition
//! uniformly from all time steps of all training episodes, and minimizes the
//! contrastive hinge objective (wm / cwm) or the doubly robust objective
//! (crm-cwm) with Adam. Everything is a pure function of the seed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelMode, TrainConfig};
use super::dr::dr_weight;
use super::forward::{bind, encode_batch, gru_forward, obs_to_tensor, transition_batch};
use super::loss::{dr_objective, hinge_objective};
use super::ops::{encode_values, paired_observation};
use super::params::{TrainedModel, TrainMeta};
use super::propensity::fit_propensity;
use crate::diff::{AdamHyper, AdamState, Tape, Tensor, Var};
use crate::error::{CwmError, Result};
use crate::rng::Stream;
use crate::sim::{EpisodePair, Observation};

const TAG_SHUFFLE: u64 = 2;
const TAG_NEG: u64 = 3;

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_secs: f64,
}

fn check_dataset(train_set: &[EpisodePair], cfg: &ModelConfig) -> Result<()> {
    let first = train_set
        .first()
        .ok_or_else(|| CwmError::Schema("training needs a nonempty dataset".into()))?;
    for (i, p) in train_set.iter().enumerate() {
        if p.ball_count() != first.ball_count()
            || p.horizon_factual() != first.horizon_factual()
            || p.horizon_cf() != first.horizon_cf()
            || p.obs_channels() != first.obs_channels()
            || p.resolution() != first.resolution()
        {
            return Err(CwmError::Schema(format!(
                "episode {i} has different dimensions from episode 0"
            )));
        }
    }
    if cfg.obs_channels != first.obs_channels() {
        return Err(CwmError::Schema(format!(
            "model expects {} observation channels, dataset has {}",
            cfg.obs_channels,
            first.obs_channels()
        )));
    }
    if cfg.resolution != first.resolution() {
        return Err(CwmError::Schema(format!(
            "model expects resolution {}, dataset has {}",
            cfg.resolution,
            first.resolution()
        )));
    }
    if first.horizon_cf() < 2 {
        return Err(CwmError::Schema(
            "counterfactual horizon must be >= 2 to form transitions".into(),
        ));
    }
    Ok(())
}

/// Train a model on episode pairs. Returns the snapshot and per-epoch stats.
pub fn train(
    train_set: &[EpisodePair],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(TrainedModel, Vec<EpochStats>)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    check_dataset(train_set, model_cfg)?;

    let mut model = TrainedModel::init(model_cfg.clone(), train_cfg.seed)?;
    model.meta = TrainMeta {
        train_config: train_cfg.clone(),
        epochs_completed: 0,
        seed: train_cfg.seed,
    };
    let mut adam = AdamState::new(&model.params, AdamHyper::with_lr(train_cfg.lr));
    let mut shuffle_rng = Stream::substream(train_cfg.seed, TAG_SHUFFLE);
    let mut neg_rng = Stream::substream(train_cfg.seed, TAG_NEG);

    let mut history = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let started = Instant::now();

        // The propensity model is refit from current encodings each epoch.
        let episode_weights = if model_cfg.mode == ModelMode::CrmCwm {
            Some(propensity_weights(&model, train_set, train_cfg.dr_weight_clip)?)
        } else {
            None
        };

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut transition_count = 0usize;
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let (loss, n_tr) = train_step(
                &mut model,
                &mut adam,
                train_set,
                chunk,
                &mut neg_rng,
                episode_weights.as_deref(),
            )
            .map_err(|e| match e {
                CwmError::Numerics(m) => {
                    CwmError::Numerics(format!("epoch {epoch}, batch {batch_idx}: {m}"))
                }
                other => other,
            })?;
            loss_sum += loss * n_tr as f64;
            transition_count += n_tr;
        }

        model.meta.epochs_completed = epoch + 1;
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / transition_count as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, history))
}

/// Per-episode clipped inverse-propensity weights from the current encoder.
/// The propensity is fit on the counterfactual-branch initial latents, the
/// states the historical do-interventions selected.
fn propensity_weights(
    model: &TrainedModel,
    train_set: &[EpisodePair],
    clip: f64,
) -> Result<Vec<f64>> {
    let obs: Vec<&Observation> = train_set.iter().map(|p| &p.cf_obs[0]).collect();
    let latents = encode_values(model, &obs)?;
    let prop = fit_propensity(&latents)?;
    latents
        .iter()
        .map(|l| {
            let logp = prop.log_density(l.flat())?;
            Ok(dr_weight(logp.exp(), true, clip))
        })
        .collect()
}

fn train_step(
    model: &mut TrainedModel,
    adam: &mut AdamState,
    train_set: &[EpisodePair],
    chunk: &[usize],
    neg_rng: &mut Stream,
    episode_weights: Option<&[f64]>,
) -> Result<(f64, usize)> {
    let cfg = model.config.clone();
    let b = chunk.len();
    let t_f = train_set[0].horizon_factual();
    let t_c = train_set[0].horizon_cf();
    let k = cfg.k_slots;
    let d = cfg.latent_dim;
    let n_tr = b * (t_c - 1);

    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;

    // Assemble the image stack and remember block offsets in latent rows.
    let (lat, cf_base, neg_base, u_opt): (Var, usize, usize, Option<Var>) =
        if cfg.mode.uses_confounders() {
            let mut images: Vec<&Observation> = Vec::with_capacity(b * (t_f + t_c) + n_tr);
            for &e in chunk {
                images.extend(train_set[e].factual_obs.iter());
            }
            for &e in chunk {
                images.extend(train_set[e].cf_obs.iter());
            }
            for _ in 0..n_tr {
                let e = neg_rng.index(train_set.len());
                let from_cf = neg_rng.flip(0.5);
                let ep = &train_set[e];
                images.push(if from_cf {
                    &ep.cf_obs[neg_rng.index(t_c)]
                } else {
                    &ep.factual_obs[neg_rng.index(t_f)]
                });
            }
            let x = obs_to_tensor(&images)?;
            let xv = tape.leaf(x);
            let lat = encode_batch(&mut tape, &net, &cfg, xv)?;

            let steps: Vec<Var> = (0..t_f)
                .map(|t| {
                    let idx: Vec<usize> = (0..b)
                        .flat_map(|bi| (0..k).map(move |kk| (bi * t_f + t) * k + kk))
                        .collect();
                    tape.gather_rows(lat, &idx)
                })
                .collect::<Result<_>>()?;
            let u = gru_forward(&mut tape, &net, &cfg, &steps)?;
            (lat, b * t_f * k, b * (t_f + t_c) * k, Some(u))
        } else {
            // The baseline consumes factual/counterfactual frame pairs,
            // concatenated channel-wise; negatives are random pairs.
            let mut paired: Vec<Observation> = Vec::with_capacity(b * t_c + n_tr);
            for &e in chunk {
                let ep = &train_set[e];
                for t in 0..t_c {
                    paired.push(paired_observation(
                        &ep.factual_obs[t.min(t_f - 1)],
                        &ep.cf_obs[t],
                    )?);
                }
            }
            for _ in 0..n_tr {
                let e = neg_rng.index(train_set.len());
                let t = neg_rng.index(t_c);
                let ep = &train_set[e];
                paired.push(paired_observation(
                    &ep.factual_obs[t.min(t_f - 1)],
                    &ep.cf_obs[t],
                )?);
            }
            let refs: Vec<&Observation> = paired.iter().collect();
            let x = obs_to_tensor(&refs)?;
            let xv = tape.leaf(x);
            let lat = encode_batch(&mut tape, &net, &cfg, xv)?;
            (lat, 0, b * t_c * k, None)
        };

    // Transition row indices, transition-major then slot.
    let mut idx_st = Vec::with_capacity(n_tr * k);
    let mut idx_next = Vec::with_capacity(n_tr * k);
    let mut idx_neg = Vec::with_capacity(n_tr * k);
    let mut idx_u = Vec::with_capacity(n_tr * k);
    for (ci, _) in chunk.iter().enumerate() {
        for t in 0..t_c - 1 {
            let tr = ci * (t_c - 1) + t;
            for kk in 0..k {
                idx_st.push(cf_base + (ci * t_c + t) * k + kk);
                idx_next.push(cf_base + (ci * t_c + t + 1) * k + kk);
                idx_neg.push(neg_base + tr * k + kk);
                idx_u.push(ci * k + kk);
            }
        }
    }

    let s_t = tape.gather_rows(lat, &idx_st)?;
    let s_next = tape.gather_rows(lat, &idx_next)?;
    let s_neg = tape.gather_rows(lat, &idx_neg)?;

    let slot_in = match u_opt {
        Some(u) => {
            let u_rep = tape.gather_rows(u, &idx_u)?;
            tape.concat(&[s_t, u_rep], 1)?
        }
        None => s_t,
    };
    let delta = transition_batch(&mut tape, &net, &cfg, slot_in, n_tr)?;

    let loss = match cfg.mode {
        ModelMode::Wm | ModelMode::Cwm => {
            let pred = tape.add(s_t, delta)?;
            hinge_objective(
                &mut tape,
                pred,
                s_next,
                s_neg,
                n_tr,
                k,
                cfg.gamma,
                cfg.distance_scale(),
            )?
        }
        ModelMode::CrmCwm => {
            let weights = episode_weights
                .ok_or_else(|| CwmError::Schema("missing propensity weights".into()))?;
            let mut wdata = Vec::with_capacity(n_tr * k * d);
            for &e in chunk {
                for _ in 0..(t_c - 1) * k * d {
                    wdata.push(weights[e]);
                }
            }
            let w = tape.leaf(Tensor::new(vec![n_tr * k, d], wdata)?);
            dr_objective(
                &mut tape,
                s_t,
                delta,
                s_next,
                s_neg,
                w,
                n_tr,
                k,
                cfg.gamma,
                cfg.distance_scale(),
            )?
        }
    };

    let loss_val = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let grad_vec: Vec<Option<Tensor>> = net.all.iter().map(|&v| grads.take(v)).collect();
    adam.apply(&mut model.params, &grad_vec)?;
    Ok((loss_val, n_tr))
}
