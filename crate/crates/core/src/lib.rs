//! Prompt-based relation extraction over dialogues with relational clue
//! detection.

pub mod checkpoint;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod pipeline;
pub mod prompting;
pub mod rcd;
pub mod scalar;
pub mod train;
pub mod vocab;

pub use error::{GraspError, Result};
pub use scalar::Scalar;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Grasp32 = pipeline::Grasp<f32>;
pub type Grasp64 = pipeline::Grasp<f64>;
