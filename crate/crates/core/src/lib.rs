//! Neural tangent kernels and the training dynamics of wide fully-connected
//! networks.
//!
//! The crate covers three layers of the same story:
//!
//! * **Kernels.** Infinite-width NNGP and NTK recursions ([`analytic_kernels`]),
//!   their finite-width Monte Carlo estimates ([`empirical_kernels`]) and the
//!   exact empirical tangent kernel of a concrete network ([`network`]).
//! * **Linearized dynamics.** Closed-form gradient flow / gradient descent for
//!   squared loss and the Gaussian-process moments of the output ensemble
//!   ([`dynamics`]); adaptive Dormand–Prince integration for the cases
//!   without a closed form ([`integrators`]).
//! * **Finite-width training.** Gradient descent and momentum on the actual
//!   network and on its first-order Taylor expansion, with drift observables
//!   ([`trainer`]).
//!
//! All arithmetic is `f64`. Matrices are [`ndarray::Array2`]; rows of input
//! and output matrices index examples.

pub mod analytic_kernels;
pub mod dataio;
pub mod dynamics;
pub mod empirical_kernels;
mod error;
pub mod integrators;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use analytic_kernels::{nngp_kernel, ntk_kernel, BivariateGaussianMoment, KernelMatrix};
pub use dataio::Dataset;
pub use error::{Error, Result};
pub use network::{Activation, Architecture, ParamMode, ParameterSet};
