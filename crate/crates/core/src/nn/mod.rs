//! Minimal layer set over candle tensors: parameters with seeded
//! initialisation, convolutions, batch norm, linear heads and the resampling
//! and pooling helpers the model needs (all differentiable).

mod layers;
pub mod ops;
mod params;

pub use layers::{BatchNorm2d, Conv2d, Linear};
pub use params::{Param, ParamStore};
