//! Desk-scale training framework for end-to-end steering prediction with
//! heterogeneous multi-layer feature mimicking.
//!
//! A 3D-inflated residual CNN with an LSTM head predicts steering angle,
//! speed and torque from short video clips, while transformed intermediate
//! features are regressed onto transformed features of frozen auxiliary
//! networks (segmentation- and flow-like providers).

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auxnet;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod mainnet;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::{GradientMap, Graph, Scalar, Tensor, Var};
