//! Multi-step dream evaluation over a test set.
//!
//! For each test episode the model dreams forward from the intervened initial
//! observation. At step 0 the "prediction" is the encoded start itself (a
//! self-consistency anchor); at step t >= 1 it is the rolled-out latent. Each
//! prediction is ranked against the encoded ground-truth observation and
//! freshly sampled encoded references from other episodes, and the latent MSE
//! against the encoded truth is averaged over the prediction steps.

use serde::{Deserialize, Serialize};

use super::ranking::{hits_at_1, rank_of, sq_dist, RankingInstance};
use crate::error::{CwmError, Result};
use crate::model::{
    encode_values, paired_observation, rollout_dream, ModelConfig, TrainedModel,
};
use crate::rng::Stream;
use crate::sim::{EpisodePair, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of episodes whose prediction ranked first, per step.
    pub h1: Vec<f64>,
    /// Mean reciprocal rank, per step.
    pub mrr: Vec<f64>,
    /// Latent MSE over prediction steps, mean and std across episodes.
    pub latent_mse_mean: f64,
    pub latent_mse_std: f64,
    pub per_episode_mse: Vec<f64>,
    pub horizon: usize,
    pub n_references: usize,
    pub episodes: usize,
    pub seed: u64,
    pub model_config: ModelConfig,
}

struct EpisodeEval {
    hits: Vec<u8>,
    ranks: Vec<usize>,
    mse: f64,
}

/// The observation the model consumes for counterfactual step `t` of an
/// episode: the raw frame, or the factual/counterfactual pair for the
/// baseline.
fn model_input(model: &TrainedModel, ep: &EpisodePair, t: usize) -> Result<Observation> {
    if model.config.mode.uses_confounders() {
        Ok(ep.cf_obs[t].clone())
    } else {
        let t_f = ep.horizon_factual();
        paired_observation(&ep.factual_obs[t.min(t_f - 1)], &ep.cf_obs[t])
    }
}

fn eval_episode(
    model: &TrainedModel,
    test_set: &[EpisodePair],
    e: usize,
    horizon: usize,
    n_references: usize,
    seed: u64,
) -> Result<EpisodeEval> {
    let ep = &test_set[e];
    let mut rng = Stream::substream(seed, e as u64);

    // Predictions: encoded start, then the dream rollout.
    let mut preds = Vec::with_capacity(horizon);
    let start = model_input(model, ep, 0)?;
    preds.extend(encode_values(model, &[&start])?);
    preds.extend(rollout_dream(
        &ep.cf_obs[0],
        &ep.factual_obs,
        horizon - 1,
        model,
    )?);

    // Truths and references, encoded in one pass.
    let mut to_encode: Vec<Observation> = Vec::with_capacity(horizon * (1 + n_references));
    for t in 0..horizon {
        to_encode.push(model_input(model, ep, t)?);
    }
    for _ in 0..horizon {
        for _ in 0..n_references {
            // An episode other than this one.
            let mut other = rng.index(test_set.len() - 1);
            if other >= e {
                other += 1;
            }
            let oe = &test_set[other];
            let obs = if model.config.mode.uses_confounders() {
                if rng.flip(0.5) {
                    oe.cf_obs[rng.index(oe.horizon_cf())].clone()
                } else {
                    oe.factual_obs[rng.index(oe.horizon_factual())].clone()
                }
            } else {
                let t = rng.index(oe.horizon_cf());
                model_input(model, oe, t)?
            };
            to_encode.push(obs);
        }
    }
    let refs: Vec<&Observation> = to_encode.iter().collect();
    let encoded = encode_values(model, &refs)?;
    let (truths, references) = encoded.split_at(horizon);

    let mut hits = Vec::with_capacity(horizon);
    let mut ranks = Vec::with_capacity(horizon);
    let mut mse_acc = 0.0;
    let per_dim = (model.config.k_slots * model.config.latent_dim) as f64;
    for t in 0..horizon {
        let inst = RankingInstance {
            predicted: preds[t].clone(),
            truth: truths[t].clone(),
            references: references[t * n_references..(t + 1) * n_references].to_vec(),
        };
        inst.validate()?;
        hits.push(hits_at_1(&inst));
        ranks.push(rank_of(&inst));
        if t >= 1 {
            mse_acc += sq_dist(&preds[t], &truths[t]) / per_dim;
        }
    }
    let mse = if horizon > 1 {
        mse_acc / (horizon - 1) as f64
    } else {
        0.0
    };
    Ok(EpisodeEval { hits, ranks, mse })
}

/// Dream and encoded-truth latent trajectories for one episode, for
/// trajectory export and plotting. Steps 0..horizon-1, like the report.
pub fn dream_and_truth_latents(
    model: &TrainedModel,
    ep: &EpisodePair,
    horizon: usize,
) -> Result<(Vec<crate::model::LatentSlots>, Vec<crate::model::LatentSlots>)> {
    if horizon == 0 || horizon > ep.horizon_cf() {
        return Err(CwmError::Schema(format!(
            "horizon {horizon} out of range for T' = {}",
            ep.horizon_cf()
        )));
    }
    let start = model_input(model, ep, 0)?;
    let mut dream = encode_values(model, &[&start])?;
    dream.extend(rollout_dream(
        &ep.cf_obs[0],
        &ep.factual_obs,
        horizon - 1,
        model,
    )?);
    let truth_obs: Vec<Observation> = (0..horizon)
        .map(|t| model_input(model, ep, t))
        .collect::<Result<_>>()?;
    let refs: Vec<&Observation> = truth_obs.iter().collect();
    let truth = encode_values(model, &refs)?;
    Ok((dream, truth))
}

/// Evaluate dream rollouts over every episode of a test set.
///
/// `horizon` counts evaluated steps 0..horizon-1 and must satisfy
/// horizon <= T' - 1. Episodes are independent; `jobs` > 1 evaluates them on
/// that many threads with a deterministic merge by episode index.
pub fn evaluate_rollout(
    model: &TrainedModel,
    test_set: &[EpisodePair],
    horizon: usize,
    n_references: usize,
    seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    if test_set.len() < 2 {
        return Err(CwmError::Schema(
            "evaluation needs at least 2 episodes for cross-episode references".into(),
        ));
    }
    let t_cf = test_set[0].horizon_cf();
    if horizon == 0 || horizon > t_cf - 1 {
        return Err(CwmError::Schema(format!(
            "horizon {horizon} out of range (dataset supports 1..={})",
            t_cf - 1
        )));
    }
    if n_references == 0 {
        return Err(CwmError::Schema("n_references must be positive".into()));
    }
    if model.config.obs_channels != test_set[0].obs_channels()
        || model.config.resolution != test_set[0].resolution()
    {
        return Err(CwmError::Schema(format!(
            "model expects {} channels at {}, dataset has {} at {}",
            model.config.obs_channels,
            model.config.resolution,
            test_set[0].obs_channels(),
            test_set[0].resolution()
        )));
    }

    let n = test_set.len();
    let jobs = jobs.max(1).min(n);
    let mut evals: Vec<Option<EpisodeEval>> = (0..n).map(|_| None).collect();
    if jobs == 1 {
        for (e, slot) in evals.iter_mut().enumerate() {
            *slot = Some(eval_episode(model, test_set, e, horizon, n_references, seed)?);
        }
    } else {
        let results: Vec<Result<Vec<(usize, EpisodeEval)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut e = w;
                        while e < n {
                            out.push((
                                e,
                                eval_episode(model, test_set, e, horizon, n_references, seed)?,
                            ));
                            e += jobs;
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for r in results {
            for (e, ev) in r? {
                evals[e] = Some(ev);
            }
        }
    }
    let evals: Vec<EpisodeEval> = evals.into_iter().map(|o| o.expect("all episodes")).collect();

    let nf = n as f64;
    let mut h1 = vec![0.0; horizon];
    let mut mrr = vec![0.0; horizon];
    for ev in &evals {
        for t in 0..horizon {
            h1[t] += ev.hits[t] as f64 / nf;
            mrr[t] += 1.0 / ev.ranks[t] as f64 / nf;
        }
    }
    let per_episode_mse: Vec<f64> = evals.iter().map(|e| e.mse).collect();
    let mean = per_episode_mse.iter().sum::<f64>() / nf;
    let var = per_episode_mse
        .iter()
        .map(|m| (m - mean) * (m - mean))
        .sum::<f64>()
        / nf;

    Ok(EvalReport {
        h1,
        mrr,
        latent_mse_mean: mean,
        latent_mse_std: var.sqrt(),
        per_episode_mse,
        horizon,
        n_references,
        episodes: n,
        seed,
        model_config: model.config.clone(),
    })
}
