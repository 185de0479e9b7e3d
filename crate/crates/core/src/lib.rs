//! Interpretability lab for operator precedence in a small decoder-only
//! transformer trained on three-operand arithmetic.
//!
//! - [`exprgen`]: dataset enumeration, parsing and exact evaluation
//! - [`tinylm`]: tokenizer, model, training, checkpoints
//! - [`tracing`]: hook specs and residual-stream caches
//! - [`analysis`]: logit lens, attribution, linear and logistic probes
//! - [`interventions`]: attention-ablation sweeps and partial embedding swaps
//! - [`geometry`]: PCA projection and silhouette separation

pub mod exprgen;
pub mod tinylm;
pub mod tracing;
pub mod analysis;
pub mod interventions;
pub mod geometry;

pub use exprgen::{Expression, FilterPolicy, Operator, OperatorLabel, StructureVariant};
pub use tinylm::{Model, ModelBundle, ModelConfig, TrainConfig, Vocab};
pub use tracing::{CapturePoint, HookSpec, ResidualCache};
