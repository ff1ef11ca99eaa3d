pub mod constraints;
pub mod data_model;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod optim;
pub mod pipeline;
pub mod privacy;
pub mod projection;
pub mod seed;
pub mod sliced_ot;

pub use error::{Error, Result};
