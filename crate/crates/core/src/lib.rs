pub mod analysis;
pub mod arch;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod intrinsics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{ElementKind, Scalar, Tensor};
