pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod training;

pub use error::{Error, Result};
