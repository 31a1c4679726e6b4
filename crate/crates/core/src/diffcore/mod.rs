//! Minimal reverse-mode gradient engine.
//!
//! A [`Tape`] records tensor-valued ops; [`Tape::backward`] writes
//! gradients into the [`ParamStore`] leaves that the loss depends on.
//! [`finite_diff_check`] verifies any closure built from these ops.

mod check;
mod nn;
mod ops;
mod params;
mod tape;

pub use check::{finite_diff_check, CheckTarget, GradReport};
pub use nn::{reflect_index, uniform_init, Conv2dSpec};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};

pub(crate) use ops::sigmoid_value;
