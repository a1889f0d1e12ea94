//! Dense tensors with reverse-mode gradients, parameters, and seeded RNG.
//!
//! Everything is computed in `f64`; files store `f32`.

mod params;
pub mod rng;
mod tape;
mod tensor;

pub use params::{Init, ParamStore, PARAM_MAGIC, PARAM_VERSION};
pub use tape::{cross_entropy, sigmoid, softmax_in_place, Gradients, Tape, Var};
pub use tensor::Tensor;
