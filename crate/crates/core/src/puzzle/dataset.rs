//! Task-set generation and the puzzle-domain training data for world models.
//!
//! World-model episodes realize "placing a ball" as a do-displacement: the
//! factual branch evolves with the action ball parked in a clear corner, the
//! counterfactual branch displaces it to a drop point before rollout. Ranking
//! at test time conditions on exactly the same kind of factual branch.

use serde::{Deserialize, Serialize};

use super::simulate::{
    extended_confounders, gap, parked_state, roll_quantized, scene_solves_itself,
    simulate_action,
};
use super::task::{
    candidate_actions, sample_scene, task_seed, Goal, PuzzleConfig, PuzzleTask,
};
use crate::error::{CwmError, Result};
use crate::rng::{mix_seed, Stream};
use crate::sim::{render, Arena, EpisodePair, Intervention};

const TAG_EPISODE: u64 = 0xE915;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub train: Vec<PuzzleTask>,
    pub test: Vec<PuzzleTask>,
}

/// Clearance required between the parked action ball and every scene ball.
fn parked_is_clear(task: &PuzzleTask, radius: f64) -> bool {
    let parked = parked_state(task, radius);
    let last = parked.ball_count() - 1;
    (0..last).all(|i| gap(&parked, i, last) > 0.02)
}

fn sample_task(rng: &mut Stream, cfg: &PuzzleConfig) -> Result<PuzzleTask> {
    let (scene, confounders) = sample_scene(rng, cfg)?;
    Ok(PuzzleTask {
        scene,
        confounders,
        goal: Goal {
            subject: 0,
            object: 1,
        },
        horizon: cfg.horizon,
    })
}

/// Generate train/test task splits. Tasks where the goal is pre-satisfied,
/// solves itself without an action, or (optionally) that no shared candidate
/// can solve are rejected and resampled.
pub fn generate_tasks(seed: u64, cfg: &PuzzleConfig) -> Result<TaskSet> {
    cfg.validate()?;
    let candidates = candidate_actions(seed, cfg);
    let total = cfg.train_tasks + cfg.test_tasks;
    let mut tasks = Vec::with_capacity(total);
    for i in 0..total {
        let mut rng = Stream::new(task_seed(seed, i as u64));
        let mut accepted = None;
        for _ in 0..cfg.max_retries {
            let task = sample_task(&mut rng, cfg)?;
            if gap(&task.scene, task.goal.subject, task.goal.object) < 0.06 {
                continue;
            }
            if !parked_is_clear(&task, cfg.action_radius_range[1]) {
                continue;
            }
            if scene_solves_itself(&task)? {
                continue;
            }
            if cfg.require_solvable {
                let mut solved = 0usize;
                let mut failed = 0usize;
                for c in &candidates {
                    match simulate_action(&task, c) {
                        Ok(true) => solved += 1,
                        _ => failed += 1,
                    }
                    if solved > 0 && failed > 0 {
                        break;
                    }
                }
                if solved == 0 || failed == 0 {
                    continue;
                }
            }
            accepted = Some(task);
            break;
        }
        tasks.push(accepted.ok_or_else(|| {
            CwmError::GenerationFailed(format!(
                "no valid task found for index {i} within {} retries",
                cfg.max_retries
            ))
        })?);
    }
    let test = tasks.split_off(cfg.train_tasks);
    Ok(TaskSet { train: tasks, test })
}

/// One world-model training episode on a puzzle scene.
pub fn generate_puzzle_episode(seed: u64, cfg: &PuzzleConfig) -> Result<EpisodePair> {
    let mut rng = Stream::new(seed);
    let frames = cfg.horizon;

    let (task, action_radius) = loop {
        let task = sample_task(&mut rng, cfg)?;
        let r = rng.uniform(cfg.action_radius_range[0], cfg.action_radius_range[1]) as f32 as f64;
        if gap(&task.scene, 0, 1) >= 0.06 && parked_is_clear(&task, r) {
            break (task, r);
        }
    };

    let confounders = extended_confounders(&task);
    let start = parked_state(&task, action_radius);
    let factual_states = roll_quantized(start, &confounders, frames)?;

    let action_slot = task.scene.ball_count();
    let parked_pos = factual_states[0].positions[action_slot];
    let intervention = {
        let mut found = None;
        for _ in 0..cfg.max_retries {
            let x = rng.uniform(0.08, 0.92) as f32 as f64;
            let y = rng.uniform(0.45, 0.92) as f32 as f64;
            let iv = Intervention::Displacement {
                ball: action_slot,
                delta: [
                    (x - parked_pos[0]) as f32 as f64,
                    (y - parked_pos[1]) as f32 as f64,
                ],
            };
            if crate::sim::apply_intervention(&factual_states[0], &iv).is_ok() {
                found = Some(iv);
                break;
            }
        }
        found.ok_or_else(|| {
            CwmError::GenerationFailed("no valid drop displacement found".into())
        })?
    };

    let cf_start = crate::sim::apply_intervention(&factual_states[0], &intervention)?;
    let cf_states = roll_quantized(cf_start, &confounders, frames)?;
    // roll_quantized re-quantizes its start; lengths are frames + 1
    debug_assert_eq!(factual_states.len(), frames + 1);

    let factual_obs = factual_states
        .iter()
        .map(|s| render(s, cfg.resolution))
        .collect::<Result<Vec<_>>>()?;
    let cf_obs = cf_states
        .iter()
        .map(|s| render(s, cfg.resolution))
        .collect::<Result<Vec<_>>>()?;

    Ok(EpisodePair {
        seed,
        confounders,
        intervention,
        factual_states,
        factual_obs,
        cf_states,
        cf_obs,
    })
}

/// The full training set for the puzzle world model.
pub fn generate_puzzle_dataset(seed: u64, cfg: &PuzzleConfig) -> Result<Vec<EpisodePair>> {
    cfg.validate()?;
    (0..cfg.episodes)
        .map(|i| generate_puzzle_episode(mix_seed(seed, TAG_EPISODE, i as u64), cfg))
        .collect()
}

/// Verification helper: the drop target used by `generate_puzzle_episode`
/// stays inside the arena for any radius in range.
pub fn drop_zone() -> (Arena, [f64; 2], [f64; 2]) {
    (Arena::UNIT, [0.08, 0.92], [0.45, 0.92])
}
