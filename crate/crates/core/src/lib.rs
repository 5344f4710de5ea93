pub mod error;
pub mod estimate;
pub mod flatness;
pub mod datagen;
pub mod graph;
pub mod harness;
pub mod model;
pub mod outliers;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};
