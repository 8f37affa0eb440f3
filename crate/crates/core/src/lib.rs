pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod finetune;
pub mod model;
pub mod optim;
pub mod pretrain;

pub use error::{Error, Result};
