//! Reflective classification.
//!
//! A base convolutional classifier makes a first prediction, a gradient-based
//! explainer turns that prediction into a multi-channel class-discriminative map at an
//! intermediate layer, and a second network consumes the input together with the map.

pub mod arch;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod explainer;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
