//! Desk-scale training loop: a synthetic order-sensitive task, a
//! linear-softmax policy with analytic gradients, and the training modes
//! (dual advantage, group-relative baseline, permutation NLL).

mod policy;
mod task;
mod train;

pub use policy::{SnapshotRole, SoftmaxPolicy};
pub use task::{answer_text, fact_text, question_text, ToySample, ToyTask, ToyTaskConfig};
pub use train::{
    curves_csv, run_alpha_sweep, run_experiment, CurvePoint, ExperimentResult, LossStats,
    OptimizerKind, Rollouts, StepOutcome, TrainConfig, TrainMode, Trainer, TOY_INIT_SCALE,
    TOY_LEARNING_RATE,
};
