//! Reverse-mode differentiation for small multilayer perceptrons: loss
//! values, parameter gradients and exact Hessian-vector products.

pub mod checkpoint;
mod mlp;
mod objective;
mod params;
mod tape;

pub use mlp::{layer_norm, mse, Batch, Layer, LossKind, Mlp, Supervised, LAYER_NORM_EPS};
pub use objective::{draw_batch, train, Objective, Schedule};
pub use params::{Layout, LayoutEntry, ParamVector};
pub use tape::{Tape, Tensor, Var};
