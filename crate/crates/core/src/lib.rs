pub mod criteria;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod model;
pub mod noise;

pub use error::{Error, Result};
