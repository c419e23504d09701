//! Dense tensor arithmetic with reverse-mode differentiation, plus the
//! fully connected and transformer blocks shared by every model.

pub mod checkpoint;
pub mod functional;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod linalg;
pub mod params;
pub mod rng;
pub mod tensor;

pub use functional::{
    scaled_sigmoid, sinusoidal_positional_encoding, softmax, SALINITY_MAX, SALINITY_MIN,
};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Ctx, EncoderLayerConfig};
pub use params::{Bound, ParamId, ParameterSet};
pub use tensor::Tensor;
