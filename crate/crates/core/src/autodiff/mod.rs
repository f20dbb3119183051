//! Reverse-mode differentiation over dense `f64` tensors, sized for the
//! recurrent encoder-decoder models in this crate.

mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;

pub use gradcheck::{grad_check, scaled_error, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, NodeId};
pub use lstm::{init_lstm, lstm_cell, lstm_step, LstmWeights};
pub use params::{ParamNodes, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::softmax_in_place;
