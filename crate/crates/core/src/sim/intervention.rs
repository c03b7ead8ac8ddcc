//! Do-operations on the initial world state: ball removal and displacement.

use serde::{Deserialize, Serialize};

use super::config::Arena;
use super::world::WorldState;
use crate::error::{CwmError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    Removal { ball: usize },
    Displacement { ball: usize, delta: [f64; 2] },
}

impl Intervention {
    pub fn ball(&self) -> usize {
        match self {
            Intervention::Removal { ball } => *ball,
            Intervention::Displacement { ball, .. } => *ball,
        }
    }
}

/// Apply an intervention inside the unit-square arena.
pub fn apply_intervention(state: &WorldState, iv: &Intervention) -> Result<WorldState> {
    apply_intervention_in(state, iv, &Arena::UNIT)
}

/// Apply an intervention with explicit arena bounds.
///
/// Removal clears the alive flag and zeroes the velocity. Displacement shifts
/// a ball and fails if the new position leaves the arena or overlaps another
/// alive ball. All untouched balls are copied verbatim.
pub fn apply_intervention_in(
    state: &WorldState,
    iv: &Intervention,
    arena: &Arena,
) -> Result<WorldState> {
    state.validate()?;
    let k = state.ball_count();
    let ball = iv.ball();
    if ball >= k {
        return Err(CwmError::InvalidIntervention(format!(
            "ball index {ball} out of range for {k} balls"
        )));
    }

    let mut next = state.clone();
    match iv {
        Intervention::Removal { ball } => {
            next.alive[*ball] = false;
            next.velocities[*ball] = [0.0, 0.0];
        }
        Intervention::Displacement { ball, delta } => {
            if !state.alive[*ball] {
                return Err(CwmError::InvalidIntervention(format!(
                    "cannot displace removed ball {ball}"
                )));
            }
            if !(delta[0].is_finite() && delta[1].is_finite()) {
                return Err(CwmError::InvalidIntervention(
                    "displacement must be finite".into(),
                ));
            }
            let b = *ball;
            next.positions[b][0] += delta[0];
            next.positions[b][1] += delta[1];

            let r = next.radii[b];
            let p = next.positions[b];
            if p[0] < r || p[0] > arena.width - r || p[1] < r || p[1] > arena.height - r {
                return Err(CwmError::InvalidIntervention(format!(
                    "displaced ball {b} leaves the arena"
                )));
            }
            for other in 0..k {
                if other == b || !next.alive[other] {
                    continue;
                }
                let dx = next.positions[other][0] - p[0];
                let dy = next.positions[other][1] - p[1];
                let rsum = next.radii[other] + r;
                if dx * dx + dy * dy < rsum * rsum {
                    return Err(CwmError::InvalidIntervention(format!(
                        "displaced ball {b} overlaps ball {other}"
                    )));
                }
            }
        }
    }
    Ok(next)
}
