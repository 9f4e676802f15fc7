pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod insight;
pub mod model;
pub mod adversary;
pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod numeric;
pub mod objectives;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
