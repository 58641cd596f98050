//! Minimal differentiable compute core: a reverse-mode tape over 2-D
//! matrices, dense/batchnorm/dropout layers, set pooling, the losses used by
//! the task heads, an Adam optimizer and the checkpoint container.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use layers::{dropout, BatchNorm, Dense};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tensor::{Matrix, Tape};
