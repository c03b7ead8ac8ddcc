//! Ground-truth puzzle physics: action insertion and binary reward.

use super::task::{PlacementAction, PuzzleTask, TOUCH_EPS};
use crate::error::{CwmError, Result};
use crate::sim::{step_world, Arena, Confounders, WorldState};

/// The placed ball always has unit mass; its friction follows the scene.
pub const ACTION_BALL_MASS: f64 = 1.0;

/// Friction assigned to the placed ball: the scene mean.
pub fn action_friction(u: &Confounders) -> f64 {
    (u.frictions.iter().sum::<f64>() / u.frictions.len() as f64) as f32 as f64
}

/// Scene confounders extended with the action ball's entry.
pub fn extended_confounders(task: &PuzzleTask) -> Confounders {
    let mut u = task.confounders.clone();
    u.masses.push(ACTION_BALL_MASS);
    u.frictions.push(action_friction(&task.confounders));
    u
}

/// Surface gap between two balls (negative when overlapping).
pub fn gap(state: &WorldState, i: usize, j: usize) -> f64 {
    let dx = state.positions[i][0] - state.positions[j][0];
    let dy = state.positions[i][1] - state.positions[j][1];
    (dx * dx + dy * dy).sqrt() - (state.radii[i] + state.radii[j])
}

/// Scene plus the action ball at its placement, validated.
pub fn insert_action(task: &PuzzleTask, action: &PlacementAction) -> Result<WorldState> {
    if !(action.x.is_finite() && action.y.is_finite() && action.r.is_finite() && action.r > 0.0) {
        return Err(CwmError::InvalidAction("non-finite placement".into()));
    }
    let r = action.r;
    if action.x < r || action.x > 1.0 - r || action.y < r || action.y > 1.0 - r {
        return Err(CwmError::InvalidAction(format!(
            "placement ({:.3}, {:.3}, r={:.3}) leaves the arena",
            action.x, action.y, action.r
        )));
    }
    let mut state = task.scene.clone();
    for i in 0..state.ball_count() {
        if !state.alive[i] {
            continue;
        }
        let dx = state.positions[i][0] - action.x;
        let dy = state.positions[i][1] - action.y;
        let min_dist = state.radii[i] + r;
        if dx * dx + dy * dy < min_dist * min_dist {
            return Err(CwmError::InvalidAction(format!(
                "placement overlaps ball {i}"
            )));
        }
    }
    state.positions.push([action.x, action.y]);
    state.velocities.push([0.0, 0.0]);
    state.radii.push(r);
    state.alive.push(true);
    Ok(state)
}

/// Run the placement and report the binary reward: did the goal pair touch at
/// any step (including the initial one)?
pub fn simulate_action(task: &PuzzleTask, action: &PlacementAction) -> Result<bool> {
    task.validate()?;
    let mut state = insert_action(task, action)?;
    let u = extended_confounders(task);
    if gap(&state, task.goal.subject, task.goal.object) <= TOUCH_EPS {
        return Ok(true);
    }
    for _ in 0..task.horizon {
        state = step_world(&state, &u, 1.0)?;
        if gap(&state, task.goal.subject, task.goal.object) <= TOUCH_EPS {
            return Ok(true);
        }
    }
    Ok(false)
}

/// No-action evolution of the bare scene, for solvability screening.
pub fn scene_solves_itself(task: &PuzzleTask) -> Result<bool> {
    let mut state = task.scene.clone();
    if gap(&state, task.goal.subject, task.goal.object) <= TOUCH_EPS {
        return Ok(true);
    }
    for _ in 0..task.horizon {
        state = step_world(&state, &task.confounders, 1.0)?;
        if gap(&state, task.goal.subject, task.goal.object) <= TOUCH_EPS {
            return Ok(true);
        }
    }
    Ok(false)
}

/// The model-facing factual branch: the scene with the action ball parked in
/// the lower-left corner, where it rests without touching anything. Placement
/// is realized as a do-displacement of this parked ball.
pub fn parked_state(task: &PuzzleTask, parked_radius: f64) -> WorldState {
    let r = parked_radius;
    let mut state = task.scene.clone();
    state.positions.push([r as f32 as f64, r as f32 as f64]);
    state.velocities.push([0.0, 0.0]);
    state.radii.push(r as f32 as f64);
    state.alive.push(true);
    state
}

/// Roll `frames` extra states (inclusive trajectory of length frames + 1) in
/// the unit arena with dt = 1 and per-state quantization.
pub fn roll_quantized(
    start: WorldState,
    u: &Confounders,
    frames: usize,
) -> Result<Vec<WorldState>> {
    crate::sim::episode::roll_states(start, u, frames + 1, 1.0, &Arena::UNIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::task::Goal;

    fn static_task(gap_between: f64) -> PuzzleTask {
        // Two balls on a zero-gravity, frictionless table.
        let r = 0.05;
        PuzzleTask {
            scene: WorldState {
                positions: vec![[0.3, 0.5], [0.3 + 2.0 * r + gap_between, 0.5]],
                velocities: vec![[0.0, 0.0], [0.0, 0.0]],
                radii: vec![r, r],
                alive: vec![true, true],
            },
            confounders: Confounders {
                masses: vec![1.0, 1.0],
                frictions: vec![0.0, 0.0],
                gravity: [0.0, 0.0],
            },
            goal: Goal {
                subject: 0,
                object: 1,
            },
            horizon: 30,
        }
    }

    #[test]
    fn pre_satisfied_goal_rewards_any_valid_action() {
        let task = static_task(0.0005);
        let action = PlacementAction {
            x: 0.8,
            y: 0.8,
            r: 0.05,
        };
        assert!(simulate_action(&task, &action).unwrap());
    }

    #[test]
    fn far_placement_in_static_scene_fails() {
        let task = static_task(0.2);
        let action = PlacementAction {
            x: 0.85,
            y: 0.85,
            r: 0.05,
        };
        assert!(!simulate_action(&task, &action).unwrap());
    }

    fn floor_task(gap_between: f64) -> PuzzleTask {
        let r = 0.05;
        PuzzleTask {
            scene: WorldState {
                positions: vec![[0.3, r], [0.3 + 2.0 * r + gap_between, r]],
                velocities: vec![[0.0, 0.0], [0.0, 0.0]],
                radii: vec![r, r],
                alive: vec![true, true],
            },
            confounders: Confounders {
                masses: vec![1.0, 1.0],
                frictions: vec![0.05, 0.05],
                gravity: [0.0, -0.02],
            },
            goal: Goal {
                subject: 0,
                object: 1,
            },
            horizon: 40,
        }
    }

    #[test]
    fn dropping_a_ball_onto_the_subject_knocks_it_into_the_object() {
        // The action ball falls onto the subject's left shoulder and shoves
        // it rightward into the object.
        let task = floor_task(0.18);
        let action = PlacementAction {
            x: task.scene.positions[0][0] - 0.03,
            y: 0.5,
            r: 0.06,
        };
        assert!(
            simulate_action(&task, &action).unwrap(),
            "constructed knock-in must solve"
        );
        // and the same drop far from everything does not
        let miss = PlacementAction {
            x: 0.89,
            y: 0.5,
            r: 0.06,
        };
        assert!(!simulate_action(&task, &miss).unwrap());
    }

    #[test]
    fn overlapping_or_outside_placements_rejected() {
        let task = static_task(0.2);
        let on_subject = PlacementAction {
            x: task.scene.positions[0][0],
            y: task.scene.positions[0][1],
            r: 0.05,
        };
        assert!(matches!(
            simulate_action(&task, &on_subject),
            Err(CwmError::InvalidAction(_))
        ));
        let outside = PlacementAction {
            x: 0.01,
            y: 0.5,
            r: 0.05,
        };
        assert!(matches!(
            simulate_action(&task, &outside),
            Err(CwmError::InvalidAction(_))
        ));
    }

    #[test]
    fn simulate_action_is_deterministic() {
        let mut task = static_task(0.15);
        task.confounders.gravity = [0.0, -0.02];
        let action = PlacementAction {
            x: 0.31,
            y: 0.7,
            r: 0.06,
        };
        let a = simulate_action(&task, &action).unwrap();
        let b = simulate_action(&task, &action).unwrap();
        assert_eq!(a, b);
    }
}
