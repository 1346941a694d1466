pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod label_tree;
pub mod linear;
pub mod metrics;
pub mod multires;
pub mod sparse;
pub mod trainer;
pub mod vectorizer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use trainer::{Inputs, Predictions, XrModel};
