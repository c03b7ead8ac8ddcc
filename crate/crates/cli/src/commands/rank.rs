//! `cwm rank`: model-based action ranking on generated puzzle tasks, with
//! the MEM and RAND baselines, emitting success curves.

use std::path::{Path, PathBuf};

use cwm_core::model::{LatentSlots, TrainedModel};
use cwm_core::puzzle::{
    candidate_actions, count_solves, dream_terminal, generate_tasks, mem_order_from_counts,
    solve_matrix, success_curve, train_classifier, Agent, ClassifierConfig, PlacementAction,
    PuzzleTask,
};
use cwm_core::rng::mix_seed;
use cwm_core::store::{load_model, save_tasks};
use cwm_core::{CwmError, Result};

use crate::config::RunConfig;
use crate::formats::CurvesFile;
use crate::logging;

const TAG_RAND_SEEDS: u64 = 0x5EED;
const TAG_CLASSIFIER: u64 = 0xC1A5;

pub struct RankOverrides<'a> {
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: Option<&'a Path>,
}

type TerminalRow = Vec<Option<LatentSlots>>;

/// Dream terminals for every (task, candidate) pair, parallelized over tasks.
fn dream_terminals(
    model: &TrainedModel,
    tasks: &[PuzzleTask],
    candidates: &[PlacementAction],
    jobs: usize,
) -> Result<Vec<TerminalRow>> {
    let n = tasks.len();
    let jobs = jobs.max(1).min(n.max(1));
    let mut out: Vec<Option<TerminalRow>> = (0..n).map(|_| None).collect();
    if jobs <= 1 {
        for (t, slot) in out.iter_mut().enumerate() {
            let row: Result<TerminalRow> = candidates
                .iter()
                .map(|c| dream_terminal(model, &tasks[t], c))
                .collect();
            *slot = Some(row?);
        }
    } else {
        let chunks: Vec<Result<Vec<(usize, TerminalRow)>>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..jobs)
                    .map(|w| {
                        scope.spawn(move || {
                            let mut acc = Vec::new();
                            let mut t = w;
                            while t < n {
                                let row: Result<TerminalRow> = candidates
                                    .iter()
                                    .map(|c| dream_terminal(model, &tasks[t], c))
                                    .collect();
                                acc.push((t, row?));
                                t += jobs;
                            }
                            Ok(acc)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("dream worker panicked"))
                    .collect()
            });
        for c in chunks {
            for (t, row) in c? {
                out[t] = Some(row);
            }
        }
    }
    Ok(out.into_iter().map(|o| o.expect("all tasks")).collect())
}

pub fn run_rank(cfg: &RunConfig, ov: &RankOverrides) -> Result<(PathBuf, CurvesFile)> {
    cfg.validate()?;
    let seed = ov.seed.unwrap_or(cfg.seed);
    let out_dir = ov.out.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.rank_dir.clone());
    std::fs::create_dir_all(&out_dir)?;

    let model = load_model(&cfg.io.model_path)?;
    let expect_channels = cfg.puzzle.scene_balls + 2;
    if model.config.obs_channels != expect_channels
        || model.config.resolution != cfg.puzzle.resolution
    {
        return Err(CwmError::Schema(format!(
            "model expects {} channels at {}, puzzle needs {} at {}",
            model.config.obs_channels,
            model.config.resolution,
            expect_channels,
            cfg.puzzle.resolution
        )));
    }

    logging::info(format!(
        "generating {} train + {} test tasks",
        cfg.puzzle.train_tasks, cfg.puzzle.test_tasks
    ));
    let tasks = generate_tasks(seed, &cfg.puzzle);
    let tasks = tasks?;
    save_tasks(&tasks, &out_dir.join("tasks.json"))?;
    let candidates = candidate_actions(seed, &cfg.puzzle);

    logging::info("labelling train tasks with the simulator");
    let train_matrix = solve_matrix(&tasks.train, &candidates)?;
    let mem_order = mem_order_from_counts(&count_solves(&train_matrix));

    logging::info("dreaming terminal latents for classifier training");
    let terminals = dream_terminals(&model, &tasks.train, &candidates, ov.jobs)?;
    let mut labelled: Vec<(LatentSlots, bool)> = Vec::new();
    for (t, row) in terminals.iter().enumerate() {
        for (c, latent) in row.iter().enumerate() {
            if let Some(l) = latent {
                labelled.push((l.clone(), train_matrix[t][c]));
            }
        }
    }
    let classifier = train_classifier(
        &labelled,
        &ClassifierConfig {
            seed: mix_seed(seed, TAG_CLASSIFIER, 0),
            ..ClassifierConfig::default()
        },
    )?;

    let rand_seeds: Vec<u64> = (0..3).map(|j| mix_seed(seed, TAG_RAND_SEEDS, j)).collect();
    let budget = cfg.puzzle.budget;

    logging::info("building success curves");
    let curves = vec![
        success_curve(
            &Agent::Ranked {
                model: &model,
                classifier: &classifier,
            },
            &tasks.test,
            &candidates,
            budget,
            &[seed],
        )?,
        success_curve(&Agent::Mem(&mem_order), &tasks.test, &candidates, budget, &[seed])?,
        success_curve(&Agent::Rand, &tasks.test, &candidates, budget, &rand_seeds)?,
    ];

    let file = CurvesFile { budget, curves };
    let json_path = out_dir.join("curves.json");
    let json = serde_json::to_string_pretty(&file).expect("curves serialize");
    std::fs::write(&json_path, json + "\n")?;

    let mut csv = String::from("agent,budget,solved_fraction\n");
    for c in &file.curves {
        for (b, v) in c.solved_fraction.iter().enumerate() {
            csv.push_str(&format!("{},{},{v}\n", c.agent, b + 1));
        }
    }
    std::fs::write(out_dir.join("curves.csv"), csv)?;

    for c in &file.curves {
        println!(
            "{}: solved@1 {:.3}, solved@10 {:.3}, solved@{budget} {:.3}",
            c.agent,
            c.at_budget(1),
            c.at_budget(10.min(budget)),
            c.at_budget(budget)
        );
    }
    println!("curves -> {}", json_path.display());
    Ok((out_dir, file))
}
