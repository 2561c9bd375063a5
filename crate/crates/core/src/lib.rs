pub mod analysis;
pub mod cli;
pub mod config;
pub mod container;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod eval;
pub mod imprint;
pub mod nn;
pub mod rng;
pub mod spectrum;
pub mod toygen;
pub mod train;
pub mod world;

pub use error::{Error, Result};
