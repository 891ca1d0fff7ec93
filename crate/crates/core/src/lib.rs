pub mod adversarial;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod losses;
pub mod motion;
pub mod pipeline;
pub mod synthetic;
pub mod training;
pub mod transform_coding;
pub mod uncertainty_viz;

pub use error::{Error, Result};
