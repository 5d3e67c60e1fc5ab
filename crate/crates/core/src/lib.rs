pub mod active;
pub mod autoencoder;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod integrate;
pub mod losses;
pub mod pgfinn;
pub mod scalar;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
