//! Teacher–student knowledge distillation at desk scale.
//!
//! A multimodal teacher (image features plus normalized clinical metadata)
//! is trained with cross-entropy and L2; an image-only student is then
//! trained against a mix of the hard labels and the teacher's
//! temperature-softened output distribution. Models are small
//! fully-connected networks standing in for the image backbones.
//!
//! Training is deterministic per seed: every random draw comes from a
//! dedicated ChaCha stream and per-sample gradients are reduced in index
//! order, whichever [`Execution`](crate::exec::Execution) is used.

mod archive;
mod data;
mod gradcheck;
mod loss;
mod model;
mod split;
mod synth;
mod train;

use thiserror::Error;

pub use archive::{InputSpec, ModelArchive};
pub use data::{
    one_hot, read_manifest, write_manifest, Clinical, ClinicalNormalizer, Sample, NUM_CLASSES,
};
pub use gradcheck::{gradient_check, CrossEntropyLoss, KdLoss, LogitLoss};
pub use loss::{cross_entropy, kd_loss, soften};
pub use model::{log_softmax, softmax, Forward, Gradients, MlpModel, Trace};
pub use split::{split, split_indices, SplitSpec};
pub use synth::{
    synth_generate, verify_generator, Provenance, SynthConfig, SynthDataset, DEFAULT_CLASS_COUNTS,
    FEATURE_SCALE, RAW_DIM,
};
pub use train::{
    distill_student, evaluate_model, predict, student_input, teacher_input, train_student_baseline,
    train_teacher, DistillConfig, EpochLog, Role, TeacherModel, TrainedModel,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("input has {got} values, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("mix weight alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("teacher output is not a probability distribution")]
    InvalidDistribution,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("class proportions must be non-negative and sum to 1, got {0:?}")]
    InvalidProportions(Vec<f64>),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("generated case {0} is not classified into its generating class")]
    GeneratorInconsistent(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
