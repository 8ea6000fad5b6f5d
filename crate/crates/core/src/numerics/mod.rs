//! Dense tensors, reverse-mode differentiation, optimization and the
//! binary tensor file format.

pub mod codec;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod recurrent;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, AdamState, NoamSchedule};
pub use params::{ParamId, ParamStore};
pub use recurrent::{LstmInputs, SruInputs};
pub use tensor::{dot, exp_f32, Element, Tensor};


#[cfg(test)]
mod proptests;
