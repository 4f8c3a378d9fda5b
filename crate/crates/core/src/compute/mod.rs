//! Differentiable computation substrate.

mod array;
pub mod gradcheck;
mod graph;
pub mod nn;
pub mod optim;
mod params;
mod real;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Graph, Var, LOG_FLOOR};
pub use nn::{bi_encode, gru_cell, run_gru, AdditiveAttention, BiEncoding, BiGru, GruWeights, Linear, Mlp};
pub use optim::{adam_step, clip_gradients, AdamState};
pub use params::{Gradients, Init, ParamId, Parameter, ParameterStore, INIT_SCALE};
pub use real::Real;

pub(crate) use graph::softmax_vec;
