pub mod cli;
pub mod config;
pub mod dataset;
pub mod datagen;
pub mod decoder;
pub mod diff;
pub mod dynamics;
pub mod error;
pub mod interp;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
