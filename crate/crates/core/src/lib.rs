//! Referring navigable region segmentation at desk scale.
//!
//! Given a road image and a driving command, the models here predict a mask
//! of the road region the vehicle should move to; [`metrics`] scores such
//! masks and [`planner`] turns one into an obstacle-free trajectory.
//!
//! Numeric code is generic over [`Scalar`]; training and inference use `f32`
//! and gradient checking uses `f64`.

pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Graph, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
