//! A small numeric kernel: tensors, forward operators with reverse-mode
//! gradients, RMSProp and a finite-difference gradient checker. Only the
//! layer types the calibration network needs are implemented.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod serialize;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{CustomBackward, Graph, Var};
pub use ops::DropoutMode;
pub use optim::{rmsprop_step, RmsProp};
pub use tensor::Tensor;
