pub mod augment;
pub mod descriptor;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gauss;
pub mod image;
pub mod layers;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
