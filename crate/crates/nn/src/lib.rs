//! A small CPU tensor library with a define-by-run reverse-mode tape.
//!
//! Every tensor is five-dimensional, `(n, c, d, h, w)`. Two-dimensional
//! feature maps use `d = 1`, so the same convolution kernel serves 2D, 2.5D
//! and 3D networks. The engine is generic over [`Scalar`] so that training
//! runs in `f32` while gradient checks can run in `f64`.

mod conv;
mod error;
mod graph;
mod norm;
mod optim;
mod params;
mod resample;
mod scalar;
mod tensor;

pub use conv::ConvGeom;
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
