//! Task-set files: versioned JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};
use crate::puzzle::TaskSet;

pub const TASK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TaskSetFile {
    format_version: u32,
    #[serde(flatten)]
    tasks: TaskSet,
}

pub fn save_tasks(tasks: &TaskSet, path: &Path) -> Result<()> {
    let file = TaskSetFile {
        format_version: TASK_FORMAT_VERSION,
        tasks: tasks.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| CwmError::Schema(format!("task serialization: {e}")))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_tasks(path: &Path) -> Result<TaskSet> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CwmError::CorruptData(format!("{}: {e}", path.display())))?;
    let file: TaskSetFile = serde_json::from_str(&raw)
        .map_err(|e| CwmError::CorruptData(format!("task set parse: {e}")))?;
    if file.format_version != TASK_FORMAT_VERSION {
        return Err(CwmError::UnsupportedVersion {
            found: file.format_version,
            expected: TASK_FORMAT_VERSION,
        });
    }
    for t in file.tasks.train.iter().chain(&file.tasks.test) {
        t.validate()?;
    }
    Ok(file.tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::{generate_tasks, PuzzleConfig};

    #[test]
    fn task_sets_roundtrip() {
        let cfg = PuzzleConfig {
            train_tasks: 2,
            test_tasks: 1,
            candidates: 30,
            ..PuzzleConfig::default()
        };
        let tasks = generate_tasks(4, &cfg).unwrap();
        let path = std::env::temp_dir().join(format!("cwm_tasks_{}.json", std::process::id()));
        save_tasks(&tasks, &path).unwrap();
        let back = load_tasks(&path).unwrap();
        assert_eq!(back, tasks);
        std::fs::remove_file(&path).unwrap();
    }
}
