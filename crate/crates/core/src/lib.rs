pub mod data;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod orchestrator;
pub mod strategies;

pub use error::{Error, Result};
