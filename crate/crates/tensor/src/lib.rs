//! Minimal dense tensor library with tape-based reverse-mode autodiff.
//!
//! Provides exactly the operator set needed by the fusion network
//! (convolutions, bicubic resampling, pooling, attention gating, L1 loss),
//! the Adam optimizer, and a finite-difference gradient checker.

mod adam;
mod conv;
mod error;
pub mod gradcheck;
mod param;
pub mod resize;
mod scalar;
mod tape;
mod tensor;

pub use adam::Adam;
pub use conv::ConvSpec;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, GradCheckConfig, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use resize::{keys_cubic, resize_planes, ResizePlan, Scale};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
