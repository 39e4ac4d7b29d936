//! Structure-constrained depth network with explicit backward passes.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod net;
pub mod tensor;

pub use adam::Adam;
pub use net::{BackwardFault, ForwardTrace, Gradients, Mode, ParamRole, ScNet, ScNetParams, Topology};
pub use tensor::Tensor4;
