//! Scalar-f64 reverse-mode autodiff, small dense layers, and Adam.
//!
//! Deliberately minimal: the models here are a few thousand parameters and
//! the hot paths are batched score queries, so a Wengert tape over vector
//! nodes beats pulling in a tensor framework. Determinism is part of the
//! contract; nothing in this module may iterate in a nondeterministic order.

pub mod adam;
pub mod finite_diff;
pub mod nn;
pub mod params;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use finite_diff::{collect_grads, finite_diff_grad, max_rel_err};
pub use nn::{Activation, Linear, Mlp};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{NodeId, Tape};
