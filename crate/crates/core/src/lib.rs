//! TTITA: table transformers for imputing textual attributes.
//!
//! Encodes heterogeneous tabular columns (numeric, categorical, textual)
//! into a flat context vector and autoregressively decodes missing text
//! attributes with a transformer decoder conditioned on that vector via
//! cross-attention. Ships with the training pipeline, multi-task heads,
//! classic baselines (mode, 1-NN, context-free decoder) and sentence-level
//! evaluation metrics.

pub mod adam;
pub mod data;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod tensor;
pub mod text;

pub use adam::AdamState;
pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::{ParamId, ParamStore, Tensor};
