//! `cwm gen`: generate train/test episode datasets with disjoint seed ranges.

use std::path::{Path, PathBuf};

use cwm_core::puzzle::dataset::generate_puzzle_episode;
use cwm_core::rng::mix_seed;
use cwm_core::sim::{generate_episode_pair, EnvConfig, EpisodePair, GravityConfig};
use cwm_core::store::{write_dataset, DatasetManifest, DatasetMeta, Split};
use cwm_core::Result;

use crate::config::{GenDomain, RunConfig};
use crate::logging;

const TRAIN_TAG: u64 = 0;
const TEST_TAG: u64 = 1;
const PUZZLE_EPISODE_TAG: u64 = 0xE915;

fn split_dirs(cfg: &RunConfig, out: Option<&Path>) -> (PathBuf, PathBuf) {
    match out {
        Some(dir) => (dir.join("train"), dir.join("test")),
        None => (cfg.io.train_dir.clone(), cfg.io.test_dir.clone()),
    }
}

/// Descriptive manifest config for a split. Puzzle-domain datasets synthesize
/// an equivalent description of their dimensions and sampling ranges.
fn manifest_env(cfg: &RunConfig) -> EnvConfig {
    match cfg.gen.domain {
        GenDomain::Balls => cfg.env.clone(),
        GenDomain::Puzzle => EnvConfig {
            balls: cfg.puzzle.scene_balls + 1,
            horizon_factual: cfg.puzzle.horizon + 1,
            horizon_cf: cfg.puzzle.horizon + 1,
            resolution: cfg.puzzle.resolution,
            mass_range: cfg.puzzle.mass_range,
            friction_range: cfg.puzzle.friction_range,
            radius_range: cfg.puzzle.radius_range,
            gravity: GravityConfig::Fixed {
                value: cfg.puzzle.gravity,
            },
            ..EnvConfig::default()
        },
    }
}

fn generate_split(
    cfg: &RunConfig,
    split: Split,
    tag: u64,
    count: usize,
    jobs: usize,
) -> Result<Vec<EpisodePair>> {
    let gen_one = |i: usize| -> Result<EpisodePair> {
        match cfg.gen.domain {
            GenDomain::Balls => {
                generate_episode_pair(mix_seed(cfg.seed, tag, i as u64), &cfg.env)
            }
            GenDomain::Puzzle => generate_puzzle_episode(
                mix_seed(cfg.seed, tag ^ PUZZLE_EPISODE_TAG, i as u64),
                &cfg.puzzle,
            ),
        }
    };

    let jobs = jobs.max(1).min(count);
    let mut pairs: Vec<Option<EpisodePair>> = (0..count).map(|_| None).collect();
    if jobs == 1 {
        for (i, slot) in pairs.iter_mut().enumerate() {
            *slot = Some(gen_one(i)?);
        }
    } else {
        let chunks: Vec<Result<Vec<(usize, EpisodePair)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut i = w;
                        while i < count {
                            out.push((i, gen_one(i)?));
                            i += jobs;
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("generation worker panicked"))
                .collect()
        });
        for c in chunks {
            for (i, p) in c? {
                pairs[i] = Some(p);
            }
        }
    }
    logging::debug(format!("{split}: generated {count} episodes"));
    Ok(pairs.into_iter().map(|p| p.expect("all generated")).collect())
}

/// Returns the written manifests (train, test), or `None` for a dry run.
pub fn run_gen(
    cfg: &RunConfig,
    out: Option<&Path>,
    jobs: usize,
    dry_run: bool,
) -> Result<Option<(DatasetManifest, DatasetManifest)>> {
    cfg.validate()?;
    let (train_dir, test_dir) = split_dirs(cfg, out);
    if dry_run {
        println!(
            "dry run: would write {} train episodes to {} and {} test episodes to {} ({:?} domain, seed {})",
            cfg.gen.train_episodes,
            train_dir.display(),
            cfg.gen.test_episodes,
            test_dir.display(),
            cfg.gen.domain,
            cfg.seed
        );
        return Ok(None);
    }

    let env = manifest_env(cfg);
    let mut manifests = Vec::with_capacity(2);
    for (split, tag, count, dir) in [
        (Split::Train, TRAIN_TAG, cfg.gen.train_episodes, &train_dir),
        (Split::Test, TEST_TAG, cfg.gen.test_episodes, &test_dir),
    ] {
        let pairs = generate_split(cfg, split, tag, count, jobs)?;
        let meta = DatasetMeta {
            env_config: env.clone(),
            split,
            base_seed: cfg.seed,
        };
        let manifest = write_dataset(&pairs, &meta, dir)?;
        println!(
            "{split}: {} episodes -> {} ({} balls, T={} T'={}, {}x{}x{})",
            manifest.episode_count,
            dir.display(),
            pairs[0].ball_count(),
            pairs[0].horizon_factual(),
            pairs[0].horizon_cf(),
            pairs[0].obs_channels(),
            pairs[0].resolution(),
            pairs[0].resolution(),
        );
        manifests.push(manifest);
    }
    let test = manifests.pop().expect("two manifests");
    let train = manifests.pop().expect("two manifests");
    Ok(Some((train, test)))
}
