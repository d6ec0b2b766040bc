//! Explainable error detection for black-box text sentiment classifiers.

pub mod annotation;
pub mod cli;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod global;
pub mod local;
pub mod model;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
