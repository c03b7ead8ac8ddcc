//! Placement-puzzle tasks and the shared candidate action set.
//!
//! A task is a floor scene of K balls under gravity with a goal triplet
//! (subject, Touching, object). The action places one extra ball before the
//! rollout. All agents rank the same seeded candidate list.

use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};
use crate::rng::{mix_seed, Stream};
use crate::sim::{Confounders, WorldState};

const TAG_TASK: u64 = 0x7A51;
const TAG_CANDIDATES: u64 = 0xAC71;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub subject: usize,
    /// The single supported relation is Touching; the goal is met when the
    /// surface gap between subject and object is at most `TOUCH_EPS`.
    pub object: usize,
}

/// Surface gap at or below this counts as touching (world units).
pub const TOUCH_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuzzleTask {
    pub scene: WorldState,
    pub confounders: Confounders,
    pub goal: Goal,
    /// Simulation steps granted after placement.
    pub horizon: usize,
}

impl PuzzleTask {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.confounders.validate()?;
        let k = self.scene.ball_count();
        if self.goal.subject >= k || self.goal.object >= k {
            return Err(CwmError::Schema("goal ball out of range".into()));
        }
        if self.goal.subject == self.goal.object {
            return Err(CwmError::Schema("goal subject equals object".into()));
        }
        if !self.scene.alive[self.goal.subject] || !self.scene.alive[self.goal.object] {
            return Err(CwmError::Schema("goal balls must be alive".into()));
        }
        if self.horizon == 0 {
            return Err(CwmError::Schema("task horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementAction {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

/// Puzzle experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PuzzleConfig {
    pub scene_balls: usize,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub candidates: usize,
    pub budget: usize,
    /// Steps simulated (and dreamed) after the placement.
    pub horizon: usize,
    /// Raster resolution for the model-facing observations.
    pub resolution: usize,
    pub gravity: [f64; 2],
    pub mass_range: [f64; 2],
    pub friction_range: [f64; 2],
    pub radius_range: [f64; 2],
    pub action_radius_range: [f64; 2],
    /// Episode pairs generated for world-model training.
    pub episodes: usize,
    /// Reject generated tasks that no shared candidate solves.
    pub require_solvable: bool,
    pub max_retries: usize,
}

impl Default for PuzzleConfig {
    fn default() -> Self {
        Self {
            scene_balls: 2,
            train_tasks: 70,
            test_tasks: 30,
            candidates: 200,
            budget: 50,
            horizon: 25,
            resolution: 15,
            gravity: [0.0, -0.02],
            mass_range: [0.5, 2.0],
            friction_range: [0.02, 0.12],
            radius_range: [0.05, 0.08],
            action_radius_range: [0.05, 0.09],
            episodes: 120,
            require_solvable: true,
            max_retries: 400,
        }
    }
}

impl PuzzleConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CwmError::Schema(m.into()));
        if self.scene_balls < 2 || self.scene_balls > 6 {
            return fail("scene_balls must be in [2, 6]");
        }
        if self.candidates == 0 || self.budget == 0 || self.horizon == 0 {
            return fail("candidates, budget, and horizon must be positive");
        }
        if self.resolution < 8 {
            return fail("resolution must be >= 8");
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !range_ok(self.mass_range) || self.mass_range[0] <= 0.0 {
            return fail("bad mass_range");
        }
        if !range_ok(self.friction_range)
            || self.friction_range[0] < 0.0
            || self.friction_range[1] >= 1.0
        {
            return fail("bad friction_range");
        }
        if !range_ok(self.radius_range) || self.radius_range[0] <= 0.0 {
            return fail("bad radius_range");
        }
        if !range_ok(self.action_radius_range) || self.action_radius_range[0] <= 0.0 {
            return fail("bad action_radius_range");
        }
        if self.max_retries == 0 {
            return fail("max_retries must be positive");
        }
        Ok(())
    }

    /// Slot count of the puzzle world model: scene balls plus the action.
    pub fn model_slots(&self) -> usize {
        self.scene_balls + 1
    }
}

/// The shared candidate list, a pure function of the seed.
pub fn candidate_actions(seed: u64, cfg: &PuzzleConfig) -> Vec<PlacementAction> {
    let mut rng = Stream::new(mix_seed(seed, TAG_CANDIDATES, 0));
    (0..cfg.candidates)
        .map(|_| PlacementAction {
            x: rng.uniform(0.08, 0.92) as f32 as f64,
            y: rng.uniform(0.45, 0.92) as f32 as f64,
            r: rng.uniform(cfg.action_radius_range[0], cfg.action_radius_range[1]) as f32 as f64,
        })
        .collect()
}

/// Sample one floor scene: subject on the left, object on the right, extras
/// scattered, everything resting and quantized.
pub(crate) fn sample_scene(
    rng: &mut Stream,
    cfg: &PuzzleConfig,
) -> Result<(WorldState, Confounders)> {
    let k = cfg.scene_balls;
    let mut radii = Vec::with_capacity(k);
    for _ in 0..k {
        radii.push(rng.uniform(cfg.radius_range[0], cfg.radius_range[1]) as f32 as f64);
    }
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(k);
    // Subject and object; the lower-left corner stays clear for the parked
    // action ball.
    positions.push([rng.uniform(0.28, 0.45) as f32 as f64, radii[0] as f32 as f64]);
    positions.push([rng.uniform(0.58, 0.78) as f32 as f64, radii[1] as f32 as f64]);
    // extras, rejection-placed low in the arena
    for i in 2..k {
        let r = radii[i];
        let mut tries = 0;
        loop {
            let x = rng.uniform(0.25, 0.9) as f32 as f64;
            let y = rng.uniform(r, 0.35) as f32 as f64;
            let clear = positions.iter().enumerate().all(|(j, p)| {
                let dx = p[0] - x;
                let dy = p[1] - y;
                let min_dist = radii[j] + r + 0.02;
                dx * dx + dy * dy > min_dist * min_dist
            });
            if clear {
                positions.push([x, y]);
                break;
            }
            tries += 1;
            if tries >= cfg.max_retries {
                return Err(CwmError::GenerationFailed(
                    "could not place an extra scene ball".into(),
                ));
            }
        }
    }

    let state = WorldState {
        positions,
        velocities: vec![[0.0, 0.0]; k],
        radii,
        alive: vec![true; k],
    };
    let mut u = Confounders {
        masses: (0..k)
            .map(|_| rng.uniform(cfg.mass_range[0], cfg.mass_range[1]))
            .collect(),
        frictions: (0..k)
            .map(|_| rng.uniform(cfg.friction_range[0], cfg.friction_range[1]))
            .collect(),
        gravity: cfg.gravity,
    };
    u.quantize();
    Ok((state, u))
}

/// Deterministic per-task seed.
pub fn task_seed(base: u64, index: u64) -> u64 {
    mix_seed(base, TAG_TASK, index)
}
