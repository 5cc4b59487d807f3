//! Dense tensors, layer kernels with backward passes, parameter storage,
//! SGD and finite-difference gradient checking.

pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod store;
pub mod tensor;

pub use gradcheck::grad_check;
pub use ops::{
    apply_affine, apply_affine_backward, sigmoid, sigmoid_cross_entropy, softmax, softmax_cross_entropy,
    AffineGrads, LossGrad,
};
pub use rng::Rng;
pub use store::{sgd_step, Gradients, Param, ParamStore};
pub use tensor::{Scalar, Tensor};
