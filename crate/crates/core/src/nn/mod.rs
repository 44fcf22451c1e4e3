//! Minimal reverse-mode automatic differentiation and optimization.

mod params;
mod tape;

pub use params::{round_f32, Adam, AdamConfig, Init, ParamGrads, ParamId, ParamStore};
pub use tape::{Graph, Var};
pub(crate) use tape::dot;
