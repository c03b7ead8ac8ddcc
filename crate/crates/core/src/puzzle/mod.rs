//! Placement puzzles: tasks with touching goals, one-shot placement actions,
//! binary reward, model-based action ranking, and the RAND / MEM baselines.

pub mod agents;
pub mod classifier;
pub mod dataset;
pub mod simulate;
pub mod task;

pub use agents::{
    count_solves, dream_terminal, mem_baseline, mem_order_from_counts, rand_baseline,
    rank_actions, solve_matrix, success_curve, Agent, SuccessCurve,
};
pub use classifier::{train_classifier, Classifier, ClassifierConfig};
pub use dataset::{generate_puzzle_dataset, generate_tasks, TaskSet};
pub use simulate::simulate_action;
pub use task::{candidate_actions, Goal, PlacementAction, PuzzleConfig, PuzzleTask, TOUCH_EPS};
