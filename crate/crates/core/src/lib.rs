pub mod autograd;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod grid;
pub mod head;
pub mod image;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod prompting;
pub mod tpr;
pub mod training;

pub use error::{Error, Result};
