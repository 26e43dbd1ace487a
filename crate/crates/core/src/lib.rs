//! Strip receptive field detection network: rank-4 tensors with reverse-mode
//! differentiation, the LSKA / SPM / SRFM / DySample building blocks, a
//! four-head detector graph, detection metrics, and file formats.

pub mod autodiff;
pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod reference;
pub mod selftest;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use graph::{Eval, Graph};
pub use params::{init_params, Init, ParamSpec, ParamStore};
pub use tensor::{Dims, Real, Tensor};
