pub mod augment;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod infotheory;
pub mod learners;
pub mod models;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{grad, Tape, Tensor};
