pub mod bench;
pub mod eval;
pub mod gen_data;
pub mod stream;
pub mod train;

use std::path::Path;

use anyhow::Context;
use gesturebench_core::data::{read_landmarks_jsonl, read_volume_set, Dataset};

use crate::CliError;

pub const LANDMARKS_FILE: &str = "landmarks.jsonl";
pub const VOLUMES_DIR: &str = "volumes";

/// Load the modality a model family consumes from a gen-data directory.
pub fn load_dataset(dir: &Path, family: &str) -> Result<Dataset, CliError> {
    match family {
        "lstm" => {
            let path = dir.join(LANDMARKS_FILE);
            let set = read_landmarks_jsonl(&path)
                .with_context(|| format!("loading landmark dataset {}", path.display()))?;
            Ok(Dataset::Landmarks(set))
        }
        "cnn3d" => {
            let path = dir.join(VOLUMES_DIR);
            let set = read_volume_set(&path)
                .with_context(|| format!("loading volume dataset {}", path.display()))?;
            Ok(Dataset::Volumes(set))
        }
        other => Err(CliError::Usage(format!(
            "unknown model family {other:?}, expected lstm or cnn3d"
        ))),
    }
}
