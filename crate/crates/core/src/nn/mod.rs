//! Minimal reverse-mode autodiff over dense `f64` matrices, the parameter
//! store and the AdamW optimizer used by every model component.

pub mod layers;
mod optim;
mod params;
mod tape;

pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use params::{init_normal, Param, ParamStore};
pub use tape::{Graph, Segment, Var};

pub type Mat = ndarray::Array2<f64>;
