pub mod canonicalization;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod kinematics;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
