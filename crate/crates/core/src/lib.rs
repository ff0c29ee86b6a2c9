pub mod activation;
pub mod arrangements;
pub mod baseline;
pub mod cli;
pub mod data;
pub mod datasets;
pub mod error;
pub mod extensions;
pub mod fmt;
pub mod linalg;
pub mod loss;
pub mod manifest;
pub mod mapping;
pub mod program;
pub mod solvers;

pub use activation::ActivationSpec;
pub use data::{DataMatrix, LabelData};
pub use error::{Error, Result};
pub use loss::{ConvexLoss, LossKind, LossSpec};
