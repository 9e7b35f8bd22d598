//! Residual Chebyshev graph convolution networks for wearable-sensor
//! activity recognition, with parameter transfer between datasets.

mod binio;
pub mod data;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
