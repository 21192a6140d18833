//! Minimal dense-tensor numerical core with reverse-mode differentiation.
//!
//! Everything is 64-bit: the networks here are tiny, so precision beats
//! speed and analytic gradients can be verified against central finite
//! differences at tight tolerances. A model instance (parameter store plus
//! graph) is single-threaded; distinct instances train concurrently with no
//! shared state.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use graph::{ln_cosh, Graph, LossKind, NodeRef, LN_2PI};
pub use layers::{
    bind_linear, bind_lstm_cell, dilated_causal_conv1d, init_linear, init_lstm_cell, linear,
    linear_forward, lstm_cell_step, lstm_sequence, lstm_sequence_from, LinearRefs, LstmCellRefs,
    LstmSeqOut,
};
pub use optim::{OptimKind, Optimizer};
pub use params::ParamStore;
pub use rng::{stream, NamedRng};
pub use tensor::Tensor;

#[cfg(test)]
mod grad_check;
