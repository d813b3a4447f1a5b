pub mod cli;
pub mod corpus;
pub mod elbo;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod oracle;
pub mod prediction;
pub mod special;
pub mod synthetic;
pub mod trainers;
pub mod verify;

pub use error::{Error, Result};
