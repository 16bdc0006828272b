//! Coupled click/review variational autoencoders for recommendation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod grad;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod synthetic;
pub mod trainer;

pub use error::{Result, VcmError};
