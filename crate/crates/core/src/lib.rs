pub mod engine;
pub mod error;
pub mod diagnostics;
pub mod landscape;
pub mod model;
pub mod spectral;
pub mod theory;
pub mod trainer;
pub mod oracle;

pub use error::{Error, Result};
pub use oracle::{EnergyOracle, Regularized};
