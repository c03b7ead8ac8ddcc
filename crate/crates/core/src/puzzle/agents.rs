//! Action-ranking agents and success curves.
//!
//! Three agents attempt candidate placements on each task: RAND draws
//! uniformly with replacement, MEM replays one global order sorted by
//! training solve counts, and the model-based ranker scores each candidate by
//! the solved-classifier applied to the dreamed terminal latent state.

use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::simulate::{
    extended_confounders, insert_action, parked_state, roll_quantized, simulate_action,
};
use super::task::{PlacementAction, PuzzleTask};
use crate::error::Result;
use crate::model::{rollout_dream, LatentSlots, TrainedModel};
use crate::rng::{mix_seed, Stream};
use crate::sim::{render, Observation};

const TAG_RAND: u64 = 0x0A4D;

/// Dream the terminal latent for one placement, or `None` when the placement
/// is invalid for this task.
pub fn dream_terminal(
    model: &TrainedModel,
    task: &PuzzleTask,
    action: &PlacementAction,
) -> Result<Option<LatentSlots>> {
    let Ok(mut displaced) = insert_action(task, action) else {
        return Ok(None);
    };
    displaced.quantize();

    let confounders = {
        let mut u = extended_confounders(task);
        u.quantize();
        u
    };
    let parked = parked_state(task, action.r);
    let factual_states = roll_quantized(parked, &confounders, task.horizon)?;
    let resolution = model.config.resolution;
    let factual_obs = factual_states
        .iter()
        .map(|s| render(s, resolution))
        .collect::<Result<Vec<Observation>>>()?;
    let cf_obs0 = render(&displaced, resolution)?;

    let dreamed = rollout_dream(&cf_obs0, &factual_obs, task.horizon, model)?;
    Ok(dreamed.into_iter().last())
}

/// Score every candidate and sort descending, ties broken by input index.
/// Invalid placements score negative infinity and sink to the end.
pub fn rank_actions(
    model: &TrainedModel,
    classifier: &Classifier,
    task: &PuzzleTask,
    candidates: &[PlacementAction],
) -> Result<Vec<(usize, f64)>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let score = match dream_terminal(model, task, c)? {
            Some(latent) => classifier.prob_solved(&latent)?,
            None => f64::NEG_INFINITY,
        };
        scored.push((i, score));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(scored)
}

/// Solve labels for every (task, candidate) pair; invalid placements count as
/// unsolved.
pub fn solve_matrix(
    tasks: &[PuzzleTask],
    candidates: &[PlacementAction],
) -> Result<Vec<Vec<bool>>> {
    tasks
        .iter()
        .map(|t| {
            candidates
                .iter()
                .map(|c| Ok(simulate_action(t, c).unwrap_or(false)))
                .collect()
        })
        .collect()
}

/// MEM baseline: one global candidate order by descending training solve
/// count, ties by index.
pub fn mem_baseline(tasks: &[PuzzleTask], candidates: &[PlacementAction]) -> Result<Vec<usize>> {
    let matrix = solve_matrix(tasks, candidates)?;
    Ok(mem_order_from_counts(&count_solves(&matrix)))
}

pub fn count_solves(matrix: &[Vec<bool>]) -> Vec<usize> {
    let n = matrix.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; n];
    for row in matrix {
        for (c, &solved) in row.iter().enumerate() {
            if solved {
                counts[c] += 1;
            }
        }
    }
    counts
}

pub fn mem_order_from_counts(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// RAND baseline: a seeded stream of candidate indices, drawn uniformly with
/// replacement.
pub fn rand_baseline(seed: u64, n_candidates: usize, attempts: usize) -> Vec<usize> {
    let mut rng = Stream::new(seed);
    (0..attempts).map(|_| rng.index(n_candidates)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    /// Fraction of tasks solved within 1..=budget attempts.
    pub solved_fraction: Vec<f64>,
    pub agent: String,
    pub seeds: Vec<u64>,
}

impl SuccessCurve {
    pub fn is_monotone(&self) -> bool {
        self.solved_fraction.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }

    pub fn at_budget(&self, b: usize) -> f64 {
        self.solved_fraction[b - 1]
    }
}

/// How an agent chooses its attempt order on a task.
pub enum Agent<'a> {
    Rand,
    Mem(&'a [usize]),
    Ranked {
        model: &'a TrainedModel,
        classifier: &'a Classifier,
    },
}

impl Agent<'_> {
    fn name(&self) -> &'static str {
        match self {
            Agent::Rand => "rand",
            Agent::Mem(_) => "mem",
            Agent::Ranked { .. } => "ranked",
        }
    }
}

/// Attempt tasks in the agent's order until success or budget exhaustion and
/// average the per-budget solve fraction over seeds. Deterministic agents are
/// unaffected by the seed; RAND redraws its stream per (seed, task).
pub fn success_curve(
    agent: &Agent,
    tasks: &[PuzzleTask],
    candidates: &[PlacementAction],
    budget: usize,
    seeds: &[u64],
) -> Result<SuccessCurve> {
    // Fixed orders can be computed once and shared across seeds.
    let fixed_orders: Option<Vec<Vec<usize>>> = match agent {
        Agent::Rand => None,
        Agent::Mem(order) => Some(tasks.iter().map(|_| order.to_vec()).collect()),
        Agent::Ranked { model, classifier } => Some(
            tasks
                .iter()
                .map(|t| {
                    Ok(rank_actions(model, classifier, t, candidates)?
                        .into_iter()
                        .map(|(i, _)| i)
                        .collect())
                })
                .collect::<Result<_>>()?,
        ),
    };

    let mut curve = vec![0.0; budget];
    for &seed in seeds {
        for (ti, task) in tasks.iter().enumerate() {
            let attempts: Vec<usize> = match &fixed_orders {
                Some(orders) => orders[ti].iter().copied().take(budget).collect(),
                None => rand_baseline(mix_seed(seed, TAG_RAND, ti as u64), candidates.len(), budget),
            };
            let mut solved_at = None;
            for (b, &ci) in attempts.iter().enumerate() {
                if simulate_action(task, &candidates[ci]).unwrap_or(false) {
                    solved_at = Some(b);
                    break;
                }
            }
            if let Some(b) = solved_at {
                for slot in curve.iter_mut().skip(b) {
                    *slot += 1.0;
                }
            }
        }
    }
    let denom = (seeds.len() * tasks.len()) as f64;
    for v in &mut curve {
        *v /= denom;
    }
    Ok(SuccessCurve {
        solved_fraction: curve,
        agent: agent.name().to_string(),
        seeds: seeds.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::task::Goal;
    use crate::sim::{Confounders, WorldState};

    fn toy_task(pre_solved: bool) -> PuzzleTask {
        let d = if pre_solved { 0.1005 } else { 0.3 };
        PuzzleTask {
            scene: WorldState {
                positions: vec![[0.3, 0.5], [0.3 + d, 0.5]],
                velocities: vec![[0.0, 0.0]; 2],
                radii: vec![0.05, 0.05],
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
            horizon: 10,
        }
    }

    fn some_candidates() -> Vec<PlacementAction> {
        vec![
            PlacementAction { x: 0.8, y: 0.8, r: 0.05 },
            PlacementAction { x: 0.8, y: 0.2, r: 0.05 },
            PlacementAction { x: 0.2, y: 0.8, r: 0.05 },
        ]
    }

    #[test]
    fn always_solving_agent_has_flat_unit_curve() {
        let tasks = vec![toy_task(true), toy_task(true)];
        let candidates = some_candidates();
        let order = vec![0, 1, 2];
        let curve = success_curve(&Agent::Mem(&order), &tasks, &candidates, 5, &[1]).unwrap();
        assert_eq!(curve.solved_fraction, vec![1.0; 5]);
        assert!(curve.is_monotone());
    }

    #[test]
    fn unsolvable_tasks_give_zero_curve() {
        let tasks = vec![toy_task(false)];
        let candidates = some_candidates(); // static scene, nothing moves
        let order = vec![0, 1, 2];
        let curve = success_curve(&Agent::Mem(&order), &tasks, &candidates, 4, &[1, 2]).unwrap();
        assert_eq!(curve.solved_fraction, vec![0.0; 4]);
        let rand = success_curve(&Agent::Rand, &tasks, &candidates, 4, &[1, 2]).unwrap();
        assert_eq!(rand.solved_fraction, vec![0.0; 4]);
    }

    #[test]
    fn mem_puts_universal_solver_first_and_breaks_ties_by_index() {
        let counts = vec![2, 5, 5, 0];
        assert_eq!(mem_order_from_counts(&counts), vec![1, 2, 0, 3]);
        let all_zero = vec![0, 0, 0];
        assert_eq!(mem_order_from_counts(&all_zero), vec![0, 1, 2]);
    }

    #[test]
    fn rand_stream_is_reproducible() {
        let a = rand_baseline(7, 10, 20);
        let b = rand_baseline(7, 10, 20);
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 10));
        assert_ne!(a, rand_baseline(8, 10, 20));
    }

    #[test]
    fn rand_curve_matches_closed_form_on_bernoulli_tasks() {
        // One pre-solved task (every candidate "solves" it) mixed with an
        // unsolvable one: p = fraction of solving attempts is 1 for the
        // first and 0 for the second, so the curve is exactly 0.5 per budget.
        let tasks = vec![toy_task(true), toy_task(false)];
        let candidates = some_candidates();
        let curve = success_curve(&Agent::Rand, &tasks, &candidates, 6, &[1, 2, 3]).unwrap();
        for v in &curve.solved_fraction {
            assert_eq!(*v, 0.5);
        }
    }
}
