//! Dual group advantage optimization for order-stable sequence policies.
//!
//! The library covers the full pipeline at desk scale:
//!
//! * [`grouping`] — permutation-variant query groups and the JSONL dataset
//!   formats;
//! * [`rewards`] — rule-based 0/1 answer scoring and the batch reward matrix;
//! * [`advantage`] — the dual (inter/intra-group) advantage pipeline with
//!   batch normalization, plus the group-relative z-score baseline;
//! * [`objective`] — clipped surrogate with KL penalty and the
//!   permutation-NLL baseline;
//! * [`metrics`] — Accuracy, Consistency Rate, and Overconfidence Rate;
//! * [`report`] — comparison tables (text and CSV) and plot series;
//! * [`toyrl`] — a fully differentiable synthetic task on which the training
//!   loop runs end to end.
//!
//! Numeric code is generic over the [`scalar::Real`] scalar (`f32` or `f64`);
//! the `*64` aliases below fix the double-precision instantiation that the
//! CLI and the endpoint auditor use.

pub mod advantage;
pub mod error;
pub mod grouping;
pub mod metrics;
pub mod objective;
pub mod report;
pub mod rewards;
pub mod scalar;
pub mod seed;
pub mod toyrl;

pub use error::{Error, Result};

/// Double-precision instantiations used by the shipped binaries.
pub type RewardMatrix64 = rewards::RewardMatrix<f64>;
pub type AdvantageConfig64 = advantage::AdvantageConfig<f64>;
pub type AdvantageBatch64 = advantage::AdvantageBatch<f64>;
pub type ObjectiveConfig64 = objective::ObjectiveConfig<f64>;
pub type MetricsReport64 = metrics::MetricsReport<f64>;
pub type SoftmaxPolicy64 = toyrl::SoftmaxPolicy<f64>;
pub type ExperimentResult64 = toyrl::ExperimentResult<f64>;

/// Single-precision counterparts.
pub type RewardMatrix32 = rewards::RewardMatrix<f32>;
pub type AdvantageBatch32 = advantage::AdvantageBatch<f32>;
pub type MetricsReport32 = metrics::MetricsReport<f32>;
pub type SoftmaxPolicy32 = toyrl::SoftmaxPolicy<f32>;
