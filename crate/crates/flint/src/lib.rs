//! flint — flow estimation and temporal interpolation for scientific ensembles.
//!
//! The library reconstructs missing timesteps of 2D+time and 3D+time scalar
//! fields and estimates a flow field for every timestep, using a stack of
//! convolutional refinement blocks that jointly predict bidirectional
//! intermediate flows and a fusion mask. A privileged teacher block (which
//! sees the ground-truth intermediate field during training) provides
//! distillation targets, so the model trains with or without ground-truth
//! flow supervision.
//!
//! Top-level layout:
//! - [`field`] / [`archive`]: grid field types and the on-disk ensemble format
//! - [`datagen`]: deterministic desk-scale data generators (LBM, analytic advection)
//! - [`warp`]: differentiable backward warping and fusion
//! - [`model`] / [`losses`] / [`train`]: the network, its losses, and the optimizer loop
//! - [`infer`]: batch interpolation and the linear baseline
//! - [`evalviz`]: metrics, reports, and figure emitters

pub mod archive;
pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod evalviz;
pub mod field;
pub mod infer;
pub mod losses;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod warp;

pub use error::{FlintError, Result};
pub use field::{FlowField, FusionMask, ScalarField};
pub use tensor::{Real, Tensor};
