//! From-scratch convolutional network engine for plant leaf disease
//! classification: tensors, layers, model assembly and serialization, the
//! image data pipeline, training, evaluation metrics, and diagnosis
//! presentation.

pub mod data;
pub mod diagnosis;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{Padding, Tensor};
