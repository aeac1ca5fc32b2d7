//! Streaming Dirichlet-process mixture clustering with damped sufficient
//! statistics, subcluster split/merge moves, and a deterministic final
//! assignment pass.

pub mod cli;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod family;
pub mod gaussian;
pub mod history;
pub mod metrics;
pub mod multinomial;
pub mod numeric;
pub mod sampler;

pub use engine::{run_stream, Batch, BatchResult, EngineConfig, FirstBatchPolicy, ModelState};
pub use error::{Error, Result};
pub use family::{ComponentParams, Family, Point, PriorHyperparams, SufficientStats};
