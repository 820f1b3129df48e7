//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything is generic over the scalar type through [`Scalar`]
//! (`f32`/`f64`); the aliases at the crate root pin the default `f64`
//! instantiation used by the rest of the workspace.
//!
//! The engine is deliberately small: rank-≤3 row-major tensors, a tape
//! of recorded ops ([`Tape`]), a named parameter store with Adam
//! ([`ParamStore`], [`Adam`]), and a versioned binary checkpoint format.
//! Non-finite values abort eagerly with the offending op's name.

pub mod checkpoint;
mod error;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{Adam, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;

/// Default 64-bit instantiations.
pub type Tensor64 = Tensor<f64>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
pub type Adam64 = Adam<f64>;

/// 32-bit instantiations, for callers that trade precision for memory.
pub type Tensor32 = Tensor<f32>;
pub type Tape32 = Tape<f32>;
pub type ParamStore32 = ParamStore<f32>;
pub type Adam32 = Adam<f32>;
