//! Rehearsal-based class-incremental learning on clip streams.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: segment-consensus clip classifier with hand-derived gradients and Adam.
//! - [`datagen`]: seeded synthetic clip streams, resolution scaling, binary clip files.
//! - [`sampler`]: key-frame selection from cumulative inter-frame motion energy.
//! - [`memory`]: herding exemplar selection and the per-class episodic store.
//! - [`losses`]: CE, KD, label smoothing, teacher-agent soft labels, self-correction loss.
//! - [`trainer`]: base and incremental sessions, evaluation, the experiment pipeline.
//! - [`metrics`]: Acc / BWF / GAA over the accuracy matrix.
//! - [`config`]: the JSON run configuration shared with the command-line harness.

pub mod audit;
pub mod config;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod sampler;
pub mod seed;
pub mod trainer;

pub use config::RunConfig;
pub use datagen::{Clip, FrameShape, StreamConfig, TaskDataset};
pub use error::{Error, Result};
pub use losses::{AgentConfig, CalibrationMode, ReplayMode, SoftLabel};
pub use memory::EpisodicMemory;
pub use metrics::{AccuracyMatrix, MetricsReport};
pub use nn::{ModelState, Params};
pub use trainer::{ExperimentOutput, SessionConfig};

/// Version string written into run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
