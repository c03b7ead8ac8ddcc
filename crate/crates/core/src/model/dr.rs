//! Doubly robust prediction and the counterfactual-risk objective.
//!
//! The doubly robust prediction of the next latent state is
//!
//!   s_dr = (O / p(s0)) * (s_next - s_t - f(s_t)) + (s_t + f(s_t))
//!
//! with O the observation indicator and p(s0) the propensity of the episode's
//! initial state under the historical sampling policy. The importance weight
//! O / p is clipped (equivalently, the density is floored) to bound variance.

use super::config::ModelMode;
use super::forward::{bind, transition_batch};
use super::latent::{ConfounderEstimate, LatentSlots};
use super::loss::dr_objective;
use super::ops::{slot_input_tensor, transition_delta};
use super::params::TrainedModel;
use super::propensity::PropensityModel;
use crate::diff::{Tape, Tensor};
use crate::error::{CwmError, Result};

/// Clipped importance weight O / p.
pub(crate) fn dr_weight(density: f64, observed: bool, clip: f64) -> f64 {
    if !observed {
        return 0.0;
    }
    (1.0 / density).min(clip)
}

/// Doubly robust one-step prediction.
pub fn dr_predict(
    s_t: &LatentSlots,
    s_next: &LatentSlots,
    u: Option<&ConfounderEstimate>,
    s0_density: f64,
    observed: bool,
    model: &TrainedModel,
) -> Result<LatentSlots> {
    if !(s0_density.is_finite() && s0_density > 0.0) {
        return Err(CwmError::Propensity(format!(
            "initial-state density must be positive, got {s0_density}"
        )));
    }
    if s_t.k_slots() != s_next.k_slots() || s_t.dim() != s_next.dim() {
        return Err(CwmError::Schema("dr_predict: latent shapes disagree".into()));
    }
    let delta = transition_delta(s_t, u, model)?;
    let w = dr_weight(s0_density, observed, model.meta.train_config.dr_weight_clip);

    let mut data = Vec::with_capacity(s_t.flat().len());
    for i in 0..s_t.flat().len() {
        let st = s_t.flat()[i];
        let sn = s_next.flat()[i];
        let f = delta.flat()[i];
        data.push(w * (sn - st - f) + (st + f));
    }
    LatentSlots::new(Tensor::new(
        vec![s_t.k_slots(), s_t.dim()],
        data,
    )?)
}

/// One transition with everything the doubly robust objective needs.
#[derive(Clone, Debug)]
pub struct DrSample {
    pub s_t: LatentSlots,
    pub s_next: LatentSlots,
    pub s_neg: LatentSlots,
    pub u: Option<ConfounderEstimate>,
    /// Initial latent state of the episode this transition came from.
    pub s0: LatentSlots,
    pub observed: bool,
}

/// Doubly robust objective over a batch:
/// mean_n [ (1/K) sum_k d(s_dr, s_next) + max(0, gamma - H~) ].
pub fn dr_loss(
    samples: &[DrSample],
    propensity: &PropensityModel,
    model: &TrainedModel,
) -> Result<f64> {
    let cfg = &model.config;
    if cfg.mode != ModelMode::CrmCwm {
        return Err(CwmError::Schema(format!(
            "dr_loss requires crm-cwm mode, model is {}",
            cfg.mode
        )));
    }
    if samples.is_empty() {
        return Err(CwmError::Schema("dr_loss: empty batch".into()));
    }
    let (k, d) = (cfg.k_slots, cfg.latent_dim);
    let n = samples.len();
    let clip = model.meta.train_config.dr_weight_clip;

    let mut slot_in = Vec::with_capacity(n * k * cfg.slot_input_dim());
    let mut st = Vec::with_capacity(n * k * d);
    let mut sn = Vec::with_capacity(n * k * d);
    let mut sg = Vec::with_capacity(n * k * d);
    let mut weights = Vec::with_capacity(n * k * d);
    for s in samples {
        let input = slot_input_tensor(&s.s_t, s.u.as_ref(), cfg)?;
        slot_in.extend_from_slice(input.data());
        st.extend_from_slice(s.s_t.flat());
        sn.extend_from_slice(s.s_next.flat());
        sg.extend_from_slice(s.s_neg.flat());
        let p = propensity.density(s.s0.flat())?;
        let w = dr_weight(p, s.observed, clip);
        weights.extend(std::iter::repeat_n(w, k * d));
    }

    let mut tape = Tape::new();
    let net = bind(&mut tape, model)?;
    let inputs = tape.leaf(Tensor::new(vec![n * k, cfg.slot_input_dim()], slot_in)?);
    let delta = transition_batch(&mut tape, &net, cfg, inputs, n)?;
    let st_v = tape.leaf(Tensor::new(vec![n * k, d], st)?);
    let sn_v = tape.leaf(Tensor::new(vec![n * k, d], sn)?);
    let sg_v = tape.leaf(Tensor::new(vec![n * k, d], sg)?);
    let w_v = tape.leaf(Tensor::new(vec![n * k, d], weights)?);
    let loss = dr_objective(
        &mut tape,
        st_v,
        delta,
        sn_v,
        sg_v,
        w_v,
        n,
        k,
        cfg.gamma,
        cfg.distance_scale(),
    )?;
    Ok(tape.value(loss).item())
}
