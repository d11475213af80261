//! Tensor building blocks on top of candle: custom CPU kernels, a named
//! parameter store with seeded initialization, and common layers.

pub mod kernels;
pub mod layers;
pub mod params;
pub mod resize;

pub use layers::*;
pub use params::{Entry, Init, ParamKind, Params};
pub use resize::bilinear_resize;
