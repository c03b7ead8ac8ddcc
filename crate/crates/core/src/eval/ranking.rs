//! Latent-space ranking metrics.
//!
//! A prediction is scored against the encoded ground truth and a set of
//! encoded reference states by squared distance over flattened slots. Ties
//! are broken pessimistically: a reference exactly as close as the prediction
//! costs the hit.

use crate::error::{CwmError, Result};
use crate::model::LatentSlots;

#[derive(Clone, Debug)]
pub struct RankingInstance {
    pub predicted: LatentSlots,
    pub truth: LatentSlots,
    pub references: Vec<LatentSlots>,
}

impl RankingInstance {
    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(CwmError::Schema(
                "ranking instance needs at least one reference".into(),
            ));
        }
        let (k, d) = (self.truth.k_slots(), self.truth.dim());
        let ok = |s: &LatentSlots| s.k_slots() == k && s.dim() == d;
        if !ok(&self.predicted) || !self.references.iter().all(ok) {
            return Err(CwmError::Schema("ranking instance shapes disagree".into()));
        }
        Ok(())
    }
}

pub(crate) fn sq_dist(a: &LatentSlots, b: &LatentSlots) -> f64 {
    a.flat()
        .iter()
        .zip(b.flat())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// 1 + number of references strictly closer to the truth than the prediction.
pub fn rank_of(inst: &RankingInstance) -> usize {
    let d_pred = sq_dist(&inst.predicted, &inst.truth);
    1 + inst
        .references
        .iter()
        .filter(|r| sq_dist(r, &inst.truth) < d_pred)
        .count()
}

/// 1 iff the prediction is strictly closer to the truth than every reference.
pub fn hits_at_1(inst: &RankingInstance) -> u8 {
    let d_pred = sq_dist(&inst.predicted, &inst.truth);
    let beaten = inst
        .references
        .iter()
        .all(|r| sq_dist(r, &inst.truth) > d_pred);
    beaten as u8
}

/// Mean reciprocal rank over a nonempty instance set.
pub fn mrr(instances: &[RankingInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(CwmError::Schema("mrr over an empty instance set".into()));
    }
    let sum: f64 = instances.iter().map(|i| 1.0 / rank_of(i) as f64).sum();
    Ok(sum / instances.len() as f64)
}
