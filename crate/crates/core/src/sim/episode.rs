//! Counterfactual episode generation.
//!
//! An episode pair is two trajectories of the same world: the factual branch
//! rolled from a sampled initial state, and the counterfactual branch rolled
//! from that state with a do-intervention applied, under the same hidden
//! confounders. Generation is a pure function of `(seed, cfg)`.

use serde::{Deserialize, Serialize};

use super::config::{EnvConfig, GravityConfig};
use super::intervention::{apply_intervention_in, Intervention};
use super::render::{render, Observation};
use super::world::{step_world_events, Confounders, WorldState};
use crate::error::{CwmError, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodePair {
    pub seed: u64,
    pub confounders: Confounders,
    pub intervention: Intervention,
    pub factual_states: Vec<WorldState>,
    pub factual_obs: Vec<Observation>,
    pub cf_states: Vec<WorldState>,
    pub cf_obs: Vec<Observation>,
}

impl EpisodePair {
    pub fn ball_count(&self) -> usize {
        self.confounders.masses.len()
    }

    pub fn horizon_factual(&self) -> usize {
        self.factual_states.len()
    }

    pub fn horizon_cf(&self) -> usize {
        self.cf_states.len()
    }

    pub fn obs_channels(&self) -> usize {
        self.factual_obs[0].channels
    }

    pub fn resolution(&self) -> usize {
        self.factual_obs[0].resolution
    }
}

/// Sample per-ball confounders and episode gravity. Values are rounded
/// through f32 so stored episodes are exact.
pub fn sample_confounders(rng: &mut Stream, cfg: &EnvConfig) -> Confounders {
    let k = cfg.balls;
    let masses = (0..k)
        .map(|_| rng.uniform(cfg.mass_range[0], cfg.mass_range[1]))
        .collect();
    let frictions = (0..k)
        .map(|_| rng.uniform(cfg.friction_range[0], cfg.friction_range[1]))
        .collect();
    let gravity = match &cfg.gravity {
        GravityConfig::Fixed { value } => *value,
        GravityConfig::Randomized {
            magnitude_range,
            angle_range,
        } => {
            let mag = rng.uniform(magnitude_range[0], magnitude_range[1]);
            let angle = rng.uniform(angle_range[0], angle_range[1]);
            [mag * angle.cos(), mag * angle.sin()]
        }
    };
    let mut u = Confounders {
        masses,
        frictions,
        gravity,
    };
    u.quantize();
    u
}

/// Rejection-sample a non-overlapping initial placement.
pub fn sample_initial_state(rng: &mut Stream, cfg: &EnvConfig) -> Result<WorldState> {
    let k = cfg.balls;
    let mut radii = Vec::with_capacity(k);
    for _ in 0..k {
        radii.push(rng.uniform(cfg.radius_range[0], cfg.radius_range[1]) as f32 as f64);
    }

    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(k);
    for i in 0..k {
        let r = radii[i];
        let mut attempts = 0;
        loop {
            let x = rng.uniform(r, cfg.arena.width - r) as f32 as f64;
            let y = rng.uniform(r, cfg.arena.height - r) as f32 as f64;
            let clear = positions.iter().enumerate().all(|(j, p)| {
                let dx = p[0] - x;
                let dy = p[1] - y;
                let min_dist = radii[j] + r + cfg.placement_gap;
                dx * dx + dy * dy >= min_dist * min_dist
            });
            if clear {
                positions.push([x, y]);
                break;
            }
            attempts += 1;
            if attempts >= cfg.max_retries {
                return Err(CwmError::GenerationFailed(format!(
                    "could not place ball {i} after {attempts} attempts"
                )));
            }
        }
    }

    let velocities = (0..k)
        .map(|_| {
            [
                rng.uniform(-cfg.max_speed, cfg.max_speed) as f32 as f64,
                rng.uniform(-cfg.max_speed, cfg.max_speed) as f32 as f64,
            ]
        })
        .collect();

    Ok(WorldState {
        positions,
        velocities,
        radii,
        alive: vec![true; k],
    })
}

fn sample_intervention(
    rng: &mut Stream,
    cfg: &EnvConfig,
    state: &WorldState,
) -> Result<Intervention> {
    let mix = &cfg.intervention;
    let p_removal = mix.removal_weight / (mix.removal_weight + mix.displacement_weight);
    if rng.flip(p_removal) {
        return Ok(Intervention::Removal {
            ball: rng.index(state.ball_count()),
        });
    }
    let radius = mix.displacement_radius;
    for _ in 0..cfg.max_retries {
        let ball = rng.index(state.ball_count());
        // Uniform over the disc via rejection in the bounding square.
        let (dx, dy) = loop {
            let dx = rng.uniform(-radius, radius);
            let dy = rng.uniform(-radius, radius);
            if dx * dx + dy * dy <= radius * radius {
                break (dx as f32 as f64, dy as f32 as f64);
            }
        };
        let iv = Intervention::Displacement {
            ball,
            delta: [dx, dy],
        };
        if apply_intervention_in(state, &iv, &cfg.arena).is_ok() {
            return Ok(iv);
        }
    }
    Err(CwmError::GenerationFailed(format!(
        "no valid displacement found in {} attempts",
        cfg.max_retries
    )))
}

/// Roll a trajectory of `horizon` states (including the start state),
/// quantizing each state so storage is lossless. The rolled state is the
/// quantized one, so stored trajectories are self-consistent.
pub fn roll_states(
    start: WorldState,
    u: &Confounders,
    horizon: usize,
    dt: f64,
    arena: &super::config::Arena,
) -> Result<Vec<WorldState>> {
    let mut states = Vec::with_capacity(horizon);
    let mut current = start;
    current.quantize();
    states.push(current.clone());
    for _ in 1..horizon {
        let (mut next, _) = step_world_events(&current, u, dt, arena)?;
        next.quantize();
        states.push(next.clone());
        current = next;
    }
    Ok(states)
}

/// Generate one factual/counterfactual trajectory pair.
pub fn generate_episode_pair(seed: u64, cfg: &EnvConfig) -> Result<EpisodePair> {
    cfg.validate()?;
    let mut rng = Stream::new(seed);

    let confounders = sample_confounders(&mut rng, cfg);
    let initial = sample_initial_state(&mut rng, cfg)?;

    let factual_states = roll_states(initial, &confounders, cfg.horizon_factual, cfg.dt, &cfg.arena)?;

    let intervention = sample_intervention(&mut rng, cfg, &factual_states[0])?;
    let cf_start = apply_intervention_in(&factual_states[0], &intervention, &cfg.arena)?;
    let cf_states = roll_states(cf_start, &confounders, cfg.horizon_cf, cfg.dt, &cfg.arena)?;

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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::mix_seed;

    fn small_cfg() -> EnvConfig {
        EnvConfig {
            balls: 2,
            horizon_factual: 6,
            horizon_cf: 6,
            resolution: 16,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = small_cfg();
        let a = generate_episode_pair(17, &cfg).unwrap();
        let b = generate_episode_pair(17, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_episode_pair(18, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_config_has_t29() {
        let pair = generate_episode_pair(3, &EnvConfig::default()).unwrap();
        assert_eq!(pair.horizon_factual(), 29);
        assert_eq!(pair.horizon_cf(), 29);
    }

    #[test]
    fn cf_start_is_intervened_factual_start() {
        let cfg = small_cfg();
        for seed in 0..20 {
            let pair = generate_episode_pair(seed, &cfg).unwrap();
            let mut expect =
                apply_intervention_in(&pair.factual_states[0], &pair.intervention, &cfg.arena)
                    .unwrap();
            expect.quantize();
            assert_eq!(pair.cf_states[0], expect, "seed {seed}");
        }
    }

    #[test]
    fn branches_share_confounders_and_dimensions() {
        let cfg = small_cfg();
        let pair = generate_episode_pair(5, &cfg).unwrap();
        assert_eq!(pair.factual_states.len(), cfg.horizon_factual);
        assert_eq!(pair.cf_states.len(), cfg.horizon_cf);
        assert_eq!(pair.factual_obs.len(), pair.factual_states.len());
        assert_eq!(pair.obs_channels(), cfg.balls + 1);
    }

    #[test]
    fn confounder_sampler_stays_in_ranges_with_expected_means() {
        // Monte-Carlo check of the uniform sampler: 10k draws, all inside the
        // configured ranges, means within 3 standard errors of midpoints.
        let cfg = EnvConfig::default();
        let n = 10_000;
        let mut rng = Stream::new(99);
        let mut masses = Vec::new();
        let mut frictions = Vec::new();
        for _ in 0..n {
            let u = sample_confounders(&mut rng, &cfg);
            for &m in &u.masses {
                assert!((cfg.mass_range[0]..=cfg.mass_range[1]).contains(&m));
                masses.push(m);
            }
            for &f in &u.frictions {
                assert!((cfg.friction_range[0]..=cfg.friction_range[1]).contains(&f));
                frictions.push(f);
            }
        }
        let check = |vals: &[f64], lo: f64, hi: f64| {
            let mid = (lo + hi) / 2.0;
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            // se of a uniform sample mean: width / sqrt(12 n)
            let se = (hi - lo) / (12.0 * vals.len() as f64).sqrt();
            assert!(
                (mean - mid).abs() < 3.0 * se,
                "mean {mean} vs mid {mid} (se {se})"
            );
        };
        check(&masses, cfg.mass_range[0], cfg.mass_range[1]);
        check(&frictions, cfg.friction_range[0], cfg.friction_range[1]);
    }

    #[test]
    fn zero_displacement_branches_identical() {
        // Force a zero displacement by applying it manually and re-rolling.
        let cfg = small_cfg();
        let pair = generate_episode_pair(11, &cfg).unwrap();
        let iv = Intervention::Displacement {
            ball: 0,
            delta: [0.0, 0.0],
        };
        let start = apply_intervention_in(&pair.factual_states[0], &iv, &cfg.arena).unwrap();
        let rolled = roll_states(start, &pair.confounders, cfg.horizon_factual, cfg.dt, &cfg.arena).unwrap();
        assert_eq!(rolled, pair.factual_states);
    }

    #[test]
    fn displacement_diverges_from_factual_branch() {
        // A displaced ball placed into another ball's path makes the branches
        // diverge within a few steps.
        let cfg = EnvConfig {
            balls: 2,
            horizon_factual: 8,
            horizon_cf: 8,
            resolution: 16,
            gravity: GravityConfig::Fixed { value: [0.0, 0.0] },
            friction_range: [0.0, 0.0],
            ..EnvConfig::default()
        };
        let u = Confounders {
            masses: vec![1.0, 1.0],
            frictions: vec![0.0, 0.0],
            gravity: [0.0, 0.0],
        };
        let state = WorldState {
            positions: vec![[0.3, 0.5], [0.7, 0.5]],
            velocities: vec![[0.05, 0.0], [0.0, 0.0]],
            radii: vec![0.05, 0.05],
            alive: vec![true, true],
        };
        let factual = roll_states(state.clone(), &u, 8, cfg.dt, &cfg.arena).unwrap();
        // Move the second ball directly into the first ball's path, closer in.
        let iv = Intervention::Displacement {
            ball: 1,
            delta: [-0.25, 0.0],
        };
        let cf0 = apply_intervention_in(&state, &iv, &cfg.arena).unwrap();
        let cf = roll_states(cf0, &u, 8, cfg.dt, &cfg.arena).unwrap();
        // Ball 0 hits the displaced ball early in the counterfactual branch
        // but travels freely in the factual one.
        let diverged_by_3 = (factual[3].positions[0][0] - cf[3].positions[0][0]).abs() > 1e-6;
        assert!(diverged_by_3, "ball 0 must diverge by step 3");
    }

    #[test]
    fn impossible_placement_fails_cleanly() {
        let cfg = EnvConfig {
            balls: 8,
            radius_range: [0.24, 0.24],
            max_retries: 50,
            ..EnvConfig::default()
        };
        assert!(matches!(
            generate_episode_pair(0, &cfg),
            Err(CwmError::GenerationFailed(_))
        ));
    }

    #[test]
    fn mix_seed_separates_splits() {
        let a = mix_seed(42, 0, 5);
        let b = mix_seed(42, 1, 5);
        let c = mix_seed(42, 0, 6);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
