//! Parameter-corruption probing and adversarial parameter defense for small
//! dense networks.
//!
//! The crate covers a minimal feed-forward network with analytic gradients,
//! sparse `ℓp` corruption sets, worst-case and random corruption of
//! parameters, loss-change indicators and their statistics, the multi-step
//! defense objective and its training loop, and uniform weight
//! quantization.

pub mod constraints;
pub mod corruption;
pub mod defense;
mod error;
pub mod hessian;
pub mod nn;
pub mod partition;
pub mod quantize;
pub mod rng;
pub mod special;
pub mod surface;
pub mod tensor;

pub use constraints::{ConstraintSet, NormOrder};
pub use corruption::{multi_step_corrupt, CorruptionTrace, MultiStepConfig};
pub use defense::{train, DefenseConfig, SgdConfig, TrainConfig, TrainReport, Variant};
pub use error::{Error, Result};
pub use nn::{Activation, Head, Model, Network};
pub use partition::ParamPartition;
pub use surface::{LossSurface, Quadratic};
pub use tensor::{Batch, Targets, Tensor};
