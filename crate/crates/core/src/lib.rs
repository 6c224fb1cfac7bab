//! Low-rank matrix estimation under generalized linear models: experimental
//! design, two-stage estimation, a dueling-bandit application, and the
//! experiment harness.

pub mod design;
pub mod duel;
pub mod error;
pub mod estimate;
pub mod glm;
pub mod harness;
pub mod matfun;
pub mod rng;
pub mod serde_matrix;

pub use error::{Error, Result};
pub use nalgebra::DMatrix;
pub use glm::GlmModel;
