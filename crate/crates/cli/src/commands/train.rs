//! `cwm train`: fit a model on the training dataset and save the snapshot.

use std::io::Write;
use std::path::{Path, PathBuf};

use cwm_core::model::{train, EpochStats, ModelMode};
use cwm_core::store::{save_model, DatasetReader};
use cwm_core::Result;

use crate::config::RunConfig;
use crate::logging;

pub struct TrainOverrides<'a> {
    pub mode: Option<&'a str>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<&'a Path>,
}

pub fn run_train(cfg: &RunConfig, ov: &TrainOverrides) -> Result<(PathBuf, Vec<EpochStats>)> {
    cfg.validate()?;
    let mode = ModelMode::parse(ov.mode.unwrap_or(&cfg.train.mode))?;
    let seed = ov.seed.unwrap_or(cfg.seed);

    let reader = DatasetReader::open(&cfg.io.train_dir)?;
    let dataset = reader.load_all()?;
    let first = &dataset[0];
    logging::info(format!(
        "training {mode} on {} episodes ({} balls, {} channels at {})",
        dataset.len(),
        first.ball_count(),
        first.obs_channels(),
        first.resolution()
    ));

    let model_cfg = cfg.train.model_config(
        mode,
        first.ball_count(),
        first.obs_channels(),
        first.resolution(),
    );
    let mut train_cfg = cfg.train.train_config(seed);
    if let Some(epochs) = ov.epochs {
        train_cfg.epochs = epochs;
    }

    let (model, history) = train(&dataset, &model_cfg, &train_cfg)?;

    let model_path = ov.out.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.model_path.clone());
    save_model(&model, &model_path)?;

    let mut lines = String::new();
    for h in &history {
        lines.push_str(&serde_json::to_string(h).expect("history serializes"));
        lines.push('\n');
    }
    match &cfg.io.history_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(p, &lines)?;
        }
        None => {
            std::io::stdout().write_all(lines.as_bytes())?;
        }
    }

    println!(
        "trained {mode} for {} epochs (final loss {:.6}) -> {}",
        history.len(),
        history.last().map_or(f64::NAN, |h| h.mean_loss),
        model_path.display()
    );
    Ok((model_path, history))
}
