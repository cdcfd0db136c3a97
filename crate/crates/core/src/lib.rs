pub mod analysis;
pub mod baselines;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod quantizer;
pub mod ssm;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
