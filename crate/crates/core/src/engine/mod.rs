//! Tensor engine: dense tensors, a reverse-mode tape with the layer primitives the
//! classifiers need, parameters with SGD + momentum, and the checkpoint container.

pub mod checkpoint;
pub mod param;
pub mod tape;
pub mod tensor;

pub use param::{sgd_momentum_step, ParamId, ParamStore, Parameter};
pub use tape::{softmax_rows, Gradients, Mode, NodeId, Padding, Tape, BN_EPS};
pub use tensor::{Scalar, Tensor};
