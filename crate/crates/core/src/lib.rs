//! Toolkit for precise CNN-based MRS spectral modeling.

pub mod dropout;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sim;
