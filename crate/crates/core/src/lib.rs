pub mod cli;
pub mod error;
pub mod eval;
pub mod model;
pub mod runtime;
pub mod seed;
pub mod server;
pub mod tensor;
pub mod train;
pub mod vocab;
pub mod world;

pub use error::{Error, Result};
