pub mod error;
pub mod linalg;
pub mod nn;
pub mod space;
pub mod tasks;

pub use error::{Error, Result};
