//! Minimal numerics for the tracker: dense `f64` matrices, a reverse-mode
//! tape, standard layers, AdamW and finite-difference checking.

mod graph;
mod mat;
mod params;

pub mod gradcheck;
pub mod layers;
pub mod optim;

pub use graph::{gelu, sigmoid, Grads, Graph, NodeId};
pub use mat::Mat;
pub use params::{Param, ParamId, ParamStore};
