//! Bit-exact persistence: episode datasets, model snapshots, task sets.

pub mod checksum;
pub mod episode_file;
pub mod manifest;
pub mod model_file;
pub mod task_file;

pub use manifest::{
    read_dataset, write_dataset, DatasetManifest, DatasetMeta, DatasetReader, Split,
    FORMAT_VERSION,
};
pub use model_file::{load_model, save_model};
pub use task_file::{load_tasks, save_tasks};
