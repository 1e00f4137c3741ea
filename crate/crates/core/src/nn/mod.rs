//! Minimal tensor/layer/optimizer engine for sequential convolutional
//! networks, with reverse-mode gradients validated against central finite
//! differences (see [`gradcheck`]).

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;

pub use layers::Mode;
pub use model::{infer_shapes, InputShape, LayerSpec, Network};
pub use optim::{AdamSpec, Optimizer, OptimizerSpec, SgdSpec};
pub use tensor::Tensor;
