//! Dataset directories: `manifest.json` plus one `ep_{i}.cwmb` per episode.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checksum::fnv1a64;
use super::episode_file::{decode_episode, encode_episode};
use crate::error::{CwmError, Result};
use crate::sim::{EnvConfig, EpisodePair};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Provenance recorded alongside the episode files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_config: EnvConfig,
    pub split: Split,
    pub base_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub env_config: EnvConfig,
    pub episode_count: usize,
    pub split: Split,
    pub base_seed: u64,
    /// FNV-1a 64 digest of each episode file, hex-encoded.
    pub checksums: Vec<String>,
}

fn episode_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("ep_{i}.cwmb"))
}

/// Write a homogeneous episode sequence plus its manifest. Returns the
/// manifest that was written.
pub fn write_dataset(
    pairs: &[EpisodePair],
    meta: &DatasetMeta,
    dir: &Path,
) -> Result<DatasetManifest> {
    if pairs.is_empty() {
        return Err(CwmError::Schema("refusing to write an empty dataset".into()));
    }
    let first = &pairs[0];
    for (i, p) in pairs.iter().enumerate() {
        if p.ball_count() != first.ball_count()
            || p.horizon_factual() != first.horizon_factual()
            || p.horizon_cf() != first.horizon_cf()
            || p.obs_channels() != first.obs_channels()
            || p.resolution() != first.resolution()
        {
            return Err(CwmError::Schema(format!(
                "episode {i} has different dimensions from episode 0"
            )));
        }
    }

    fs::create_dir_all(dir)?;
    let mut checksums = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let bytes = encode_episode(pair)?;
        checksums.push(format!("{:016x}", fnv1a64(&bytes)));
        fs::write(episode_path(dir, i), &bytes)?;
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        env_config: meta.env_config.clone(),
        episode_count: pairs.len(),
        split: meta.split,
        base_seed: meta.base_seed,
        checksums,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CwmError::Schema(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// Checksum-verified streaming access to a dataset directory.
pub struct DatasetReader {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let raw = fs::read_to_string(&manifest_path).map_err(|e| {
            CwmError::CorruptData(format!("missing manifest {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&raw)
            .map_err(|e| CwmError::CorruptData(format!("manifest parse: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CwmError::UnsupportedVersion {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if manifest.checksums.len() != manifest.episode_count {
            return Err(CwmError::CorruptData(format!(
                "manifest lists {} checksums for {} episodes",
                manifest.checksums.len(),
                manifest.episode_count
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.episode_count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.episode_count == 0
    }

    /// Load and verify episode `i`.
    pub fn load(&self, i: usize) -> Result<EpisodePair> {
        if i >= self.manifest.episode_count {
            return Err(CwmError::Schema(format!(
                "episode index {i} out of {}",
                self.manifest.episode_count
            )));
        }
        let path = episode_path(&self.dir, i);
        let name = format!("ep_{i}.cwmb");
        let bytes =
            fs::read(&path).map_err(|e| CwmError::CorruptData(format!("{name}: {e}")))?;
        let digest = format!("{:016x}", fnv1a64(&bytes));
        if digest != self.manifest.checksums[i] {
            return Err(CwmError::CorruptData(format!(
                "{name}: checksum mismatch (file {digest}, manifest {})",
                self.manifest.checksums[i]
            )));
        }
        decode_episode(&bytes, &name)
    }

    pub fn load_all(&self) -> Result<Vec<EpisodePair>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

/// Eagerly load a whole dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Vec<EpisodePair>> {
    DatasetReader::open(dir)?.load_all()
}
