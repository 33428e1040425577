//! Budget-aware video frame selection.
//!
//! Frames are conditioned on a query, a diverse and relevant subset is picked
//! by greedy DPP MAP inference in feature space, each selected frame is scored
//! by its leave-one-out determinant contribution, and a global visual-token
//! budget is split across the most important frames.

pub mod alloc;
pub mod bench;
pub mod cli;
pub mod error;
pub mod gd;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod select;
pub mod types;

pub use alloc::{build_pipeline, PipelineOutput};
pub use error::{Error, Result};
pub use io::{Mode, RunConfig};
pub use linalg::Matrix;
pub use types::{
    AllocationPlan, ConditionedFeatures, EmbeddingSet, ImportanceTable, SelectionTrace,
};
