pub mod ebm;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod tasks;
pub mod unle;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations of the generic numerical core.
pub type Net = nn::NetParams<f64>;
pub type Adam = nn::AdamState<f64>;
pub type Cloud = samplers::ParticleCloud<f64>;
pub type Chain = samplers::ChainState<f64>;
