pub mod agents;
pub mod buffer;
pub mod config;
pub mod dist;
pub mod envs;
pub mod error;
pub mod nn;
pub mod registry;
pub mod returns;
pub mod scalar;
pub mod srl;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instances of the generic numeric types.
pub type MatrixF64 = nn::Matrix<f64>;
pub type MlpF64 = nn::Mlp<f64>;
pub type BatchF64 = buffer::Batch<f64>;
pub type TrajectoryF64 = returns::Trajectory<f64>;
pub type PcaF64 = srl::PcaModel<f64>;
