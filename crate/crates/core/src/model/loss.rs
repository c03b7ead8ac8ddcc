//! Shared tape builders for the training objectives.
//!
//! Both the public loss operations and the training loop route through these
//! builders, so there is exactly one implementation of each formula.

use crate::diff::{Tape, Var};
use crate::error::Result;

/// Energies of a transition batch.
///
/// `pred`, `s_next`, `s_neg` are [N*K, d]. Returns per-item vectors [N]:
/// positive energy H and negative energy H~, each the slot-mean of squared
/// distances scaled by `scale` (0.5 / sigma^2).
pub(crate) fn energies(
    tape: &mut Tape,
    pred: Var,
    s_next: Var,
    s_neg: Var,
    n: usize,
    k: usize,
    scale: f64,
) -> Result<(Var, Var)> {
    let d = tape.value(pred).shape()[1];
    let pred_rows = tape.reshape(pred, &[n, k * d])?;
    let next_rows = tape.reshape(s_next, &[n, k * d])?;
    let neg_rows = tape.reshape(s_neg, &[n, k * d])?;

    let pos_sq = tape.sq_dist_rows(pred_rows, next_rows)?;
    let h_pos = tape.affine(pos_sq, scale / k as f64, 0.0)?;

    let neg_sq = tape.sq_dist_rows(neg_rows, next_rows)?;
    let h_neg = tape.affine(neg_sq, scale / k as f64, 0.0)?;
    Ok((h_pos, h_neg))
}

/// max(0, gamma - h_neg), per item.
pub(crate) fn hinge_term(tape: &mut Tape, h_neg: Var, gamma: f64) -> Result<Var> {
    let flipped = tape.affine(h_neg, -1.0, gamma)?;
    tape.relu(flipped)
}

/// Contrastive hinge objective: mean(H) + mean(max(0, gamma - H~)).
#[allow(clippy::too_many_arguments)]
pub(crate) fn hinge_objective(
    tape: &mut Tape,
    pred: Var,
    s_next: Var,
    s_neg: Var,
    n: usize,
    k: usize,
    gamma: f64,
    scale: f64,
) -> Result<Var> {
    let (h_pos, h_neg) = energies(tape, pred, s_next, s_neg, n, k, scale)?;
    let hinge = hinge_term(tape, h_neg, gamma)?;
    let pos_mean = tape.mean_all(h_pos)?;
    let hinge_mean = tape.mean_all(hinge)?;
    tape.add(pos_mean, hinge_mean)
}

/// Doubly robust objective.
///
/// `weights` holds the per-row O / p(s0) factor (already clipped), replicated
/// across each sample's slot rows. The prediction inside the first term is
///   s_dr = w * (s_next - s_t - delta) + (s_t + delta)
/// and the negative term is the same hinge as the contrastive objective.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dr_objective(
    tape: &mut Tape,
    s_t: Var,
    delta: Var,
    s_next: Var,
    s_neg: Var,
    weights: Var,
    n: usize,
    k: usize,
    gamma: f64,
    scale: f64,
) -> Result<Var> {
    let pred = tape.add(s_t, delta)?;
    let gap = tape.sub(s_next, pred)?; // s_next - s_t - delta
    let corr = tape.mul(weights, gap)?;
    let s_dr = tape.add(corr, pred)?;

    let (first, h_neg) = energies(tape, s_dr, s_next, s_neg, n, k, scale)?;
    let hinge = hinge_term(tape, h_neg, gamma)?;
    let first_mean = tape.mean_all(first)?;
    let hinge_mean = tape.mean_all(hinge)?;
    tape.add(first_mean, hinge_mean)
}
