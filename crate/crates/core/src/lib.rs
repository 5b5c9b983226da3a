//! Domain generalization through Fourier-phase feature distillation,
//! cross-domain correlation alignment and a feature exploration penalty.
//!
//! The numeric layers ([`diffcore`], [`fourier`], [`losses`], [`model`]) are
//! generic over [`Scalar`] (`f32` or `f64`). The data pipeline and the training
//! driver run in `f64`; the aliases below name the concrete types they use.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diffcore;
pub mod error;
pub mod fourier;
pub mod losses;
pub mod model;
mod scalar;
pub mod training;

pub use scalar::Scalar;

pub type Tensor = diffcore::Tensor<f64>;
pub type Graph = diffcore::Graph<f64>;
pub type OptimState = diffcore::OptimState<f64>;
pub type Spectrum = fourier::Spectrum<f64>;
pub type TeacherModel = model::TeacherModel<f64>;
pub type StudentModel = model::StudentModel<f64>;
