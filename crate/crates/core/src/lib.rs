pub mod adapters;
pub mod baseline;
pub mod cost;
pub mod error;
pub mod eval;
pub mod landmark;
pub mod merge;
pub mod refine;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
