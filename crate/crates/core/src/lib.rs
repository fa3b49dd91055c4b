pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod su;
pub mod tensor;

pub use error::{Error, Result};
pub mod descriptor;
pub mod image;
pub mod pyramid;
pub mod svm;
pub mod synth;
