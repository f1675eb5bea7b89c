//! Inversion, null-embedding optimization and text-driven editing for small
//! conditional rectified-flow models, with the diagnostics used to study
//! prompt sensitivity ("sink traps") and out-of-distribution conditioning.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod editing;
pub mod error;
pub mod experiments;
pub mod field;
pub mod metrics;
pub mod nti;
pub mod rng;
pub mod sampler;
pub mod train;

pub use checkpoint::Checkpoint;
pub use dataset::DatasetSpec;
pub use error::{Error, Result};
pub use field::{Condition, ConditionKind, Latent, VelocityField};
pub use nti::{NtiConfig, NullSchedule};
pub use sampler::{GuidanceConfig, Trajectory};
pub use train::TrainConfig;
