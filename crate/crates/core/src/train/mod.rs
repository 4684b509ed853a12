//! Classifier training on frozen embeddings, with optional retrieval fusion.

mod check;
mod dataset;
mod eval;
mod loss;
mod metrics;
mod model;
mod trainer;

pub use check::{mam_problem, GradProblem};
pub use dataset::{Dataset, DatasetSidecar, SplitLabels};
pub use eval::{argmax, evaluate, evaluate_with_neighbors, grow_memory_eval, live_neighbors, predict};
pub use loss::{ce_label_smoothing, lace_logits, lace_offsets};
pub use metrics::{shot_categories, Metrics, ShotCategory, ShotThresholds};
pub use model::{Mode, Model, ModelCache, ModelConfig};
pub use trainer::{train, write_history, EpochRecord, EvalSet, TrainConfig, TrainMemory, TrainOutcome};
