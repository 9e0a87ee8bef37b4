//! Training, evaluation, checkpoints, inspection export and ablation runs.

mod ablate;
mod checkpoint;
mod eval;
mod inspect;
mod optim;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablate::{run_ablations, AblationReport, AblationRow, Variant};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use eval::{
    check_compatible, eval_pool, evaluate, majority_predictions, mean_predictions, predict_all, score, shuffle_labels, Evaluation, MetricKind,
    THREADS_ENV,
};
pub use inspect::{dump_graph, verify_inspection, InspectionRecord, UnitInspection, DEFAULT_TOP_K};
pub use optim::Adam;
pub use train::{batch_gradients, train, EpochRecord, RunReport, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::model::{HostrConfig, Task};
use crate::synth::{answer_labels, question_vocabulary, TaskTemplate, WorldSpec};

/// Contents of a configuration file: a `[model]` and a `[train]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: HostrConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Model sized for a synthetic world and template, with reference
    /// training settings for the task.
    pub fn for_world(world: &WorldSpec, template: TaskTemplate) -> Self {
        let task = match template {
            TaskTemplate::Count => Task::Count,
            _ => Task::OpenEnded,
        };
        let model = HostrConfig {
            d_app: world.d_app,
            d_g: world.d_g,
            vocab_size: question_vocabulary().len(),
            task,
            num_answers: answer_labels().len(),
            count_min: 0,
            count_max: world.max_count as i64,
            ..HostrConfig::default()
        };
        Self {
            train: TrainConfig::for_task(task),
            model,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}
