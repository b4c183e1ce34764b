//! Multi-task learning with differentiable sorting.
//!
//! A shared-bottom network predicts one probability per stage of a user's
//! click → conversion funnel; the per-task predictions are aggregated into one
//! score and a differentiable sorting loss pushes the induced order of each
//! impression towards the order given by label depth.
//!
//! ```
//! use mtlds::aggregate::AggregatorKind;
//! use mtlds::AggregatorSpec;
//!
//! let spec = AggregatorSpec::new(AggregatorKind::Mul, 2);
//! assert!((spec.score(&[0.5, 0.4]).unwrap() - 0.2).abs() < 1e-12);
//! ```

pub mod aggregate;
pub mod cli;
pub mod data;
mod error;
pub mod eval;
pub mod gradcore;
pub mod model;
pub mod sortops;

pub use aggregate::{AggregatorKind, AggregatorSpec, LabelSequence};
pub use data::{Dataset, Impression, Sample, Schema, SynthConfig};
pub use error::{Error, Result};
pub use eval::{EvalConfig, MetricReport, RankBy};
pub use gradcore::{Graph, Tensor, Var};
pub use model::{fit, ModelConfig, ModelKind, SharedBottomModel, TrainReport};
