pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod http;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod q_model;
pub mod qa_model;
pub mod rng;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
