//! Minimal reverse-mode differentiation over dense tensors.

pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use graph::{Graph, Var};
pub use optim::{lr_schedule, step_decay, Adam, AdamConfig};
pub use params::{Gradients, Param, ParamId, ParamStore};
