pub mod autodiff;
pub mod error;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
mod kernels;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
