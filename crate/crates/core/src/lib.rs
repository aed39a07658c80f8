//! Spectral laboratory for the two-dimensional Boussinesq system linearized
//! around near-Couette shear in the channel `y ∈ [-1, 1]`.

pub mod base_flow;
pub mod cheb;
pub mod energy;
pub mod error;
pub mod fit;
pub mod grid;
pub mod jk;
pub mod kernels;
pub mod linear;
pub mod nonlinear;
pub mod poisson;
pub mod rng;

pub use error::{CblError, Result};
pub use grid::{ChannelGrid, ComplexVec, GaussRule, RealVec};
