//! Latent-dynamics surrogates and reinforcement learning for CO2 injection
//! and brine production control.

pub mod baselines;
pub mod mld;
pub mod msdrl;
pub mod reservoir;
pub mod sac;
pub mod scalar;
pub mod scenario;
pub mod seed;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{Graph, ParamStore, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
