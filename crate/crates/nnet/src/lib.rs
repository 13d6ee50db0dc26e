//! Small double-precision neural network core.
//!
//! Everything here runs on the CPU in `f64`: a dense [`Tensor`], a
//! per-sequence autodiff [`Graph`], transformer [`layers`], the Adam
//! optimizer, a finite-difference [`gradcheck`](gradcheck::gradcheck) and a
//! binary [`checkpoint`] container.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod incremental;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use config::ModelConfig;
pub use error::{NnetError, Result};
pub use graph::{attention, cross_entropy, log_softmax_rows, Graph, Mask, Var};
pub use incremental::DecoderCache;
pub use optim::{adam_step, AdamState, WarmupSchedule};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
