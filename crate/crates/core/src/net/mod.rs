//! Minimal differentiable building blocks.
//!
//! Every layer exposes a forward pass that records what its backward pass
//! needs, and a backward pass that accumulates parameter gradients into the
//! [`ParameterStore`]. The only contract is agreement with central finite
//! differences, which [`grad_check`] measures.

mod adam;
mod affine;
mod gradcheck;
mod lstm;
mod store;

pub use adam::{AdamConfig, OptimizerState};
pub use affine::Affine;
pub use gradcheck::{grad_check, relative_error, GRAD_CHECK_FLOOR};
pub use lstm::{LstmCache, LstmCell, LstmGrad, LstmState};
pub use store::{GroupId, Grads, ParamGroup, ParamId, ParamInfo, ParameterStore, Values};
