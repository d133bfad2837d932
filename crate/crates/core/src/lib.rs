//! Bayesian additive regression trees with posterior interpretation tools
//! and the panel-index preprocessing that feeds them.

pub mod bart;
pub mod collinearity;
pub mod error;
pub mod index;
pub mod interpret;
pub mod matrix;
pub mod model;
pub mod panel;
pub mod parallel;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::{draw, Distribution, RandomStream};
