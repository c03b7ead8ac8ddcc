//! `cwm eval`: score dream rollouts on the test dataset.

use std::path::{Path, PathBuf};

use cwm_core::eval::{dream_and_truth_latents, evaluate_rollout, EvalReport};
use cwm_core::store::{load_model, DatasetReader};
use cwm_core::Result;

use crate::config::RunConfig;
use crate::formats::{TrajDump, TrajEpisode};
use crate::logging;

pub struct EvalOverrides<'a> {
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: Option<&'a Path>,
}

pub fn run_eval(cfg: &RunConfig, ov: &EvalOverrides) -> Result<(PathBuf, EvalReport)> {
    cfg.validate()?;
    let model = load_model(&cfg.io.model_path)?;
    let test_set = DatasetReader::open(&cfg.io.test_dir)?.load_all()?;
    let horizon = ov.horizon.unwrap_or(cfg.eval.horizon);
    let seed = ov.seed.unwrap_or(cfg.seed);

    logging::info(format!(
        "evaluating {} on {} episodes, horizon {horizon}, {} references",
        model.config.mode,
        test_set.len(),
        cfg.eval.n_references
    ));
    let report = evaluate_rollout(
        &model,
        &test_set,
        horizon,
        cfg.eval.n_references,
        seed,
        ov.jobs,
    )?;

    let report_path = ov.out.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.report_path.clone());
    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, json + "\n")?;

    if let Some(traj_path) = &cfg.io.traj_path {
        let mut episodes = Vec::with_capacity(test_set.len());
        for (i, ep) in test_set.iter().enumerate() {
            let (dream, truth) = dream_and_truth_latents(&model, ep, horizon)?;
            episodes.push(TrajEpisode {
                episode: i,
                dream: dream.iter().map(|l| l.flat().to_vec()).collect(),
                factual: truth.iter().map(|l| l.flat().to_vec()).collect(),
            });
        }
        let dump = TrajDump { horizon, episodes };
        if let Some(parent) = traj_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let json = serde_json::to_string(&dump).expect("trajectories serialize");
        std::fs::write(traj_path, json + "\n")?;
        logging::info(format!("latent trajectories -> {}", traj_path.display()));
    }

    let mean_h1: f64 = report.h1.iter().sum::<f64>() / report.h1.len() as f64;
    let mean_mrr: f64 = report.mrr.iter().sum::<f64>() / report.mrr.len() as f64;
    println!(
        "eval: mean H@1 {:.4}, mean MRR {:.4}, latent MSE {:.6} +- {:.6} -> {}",
        mean_h1,
        mean_mrr,
        report.latent_mse_mean,
        report.latent_mse_std,
        report_path.display()
    );
    Ok((report_path, report))
}
