//! Simulation and verification engine for the 1-D stochastic Cahn-Hilliard
//! equation driven by fractional-in-time, white-in-space noise on
//! `D = [0, pi]` with homogeneous Neumann conditions:
//!
//! `u_t = -(u_xx - f(u))_xx + sigma dW_H`,  `H in (1/2, 1)`.
//!
//! The crate builds the noise from its Volterra representation (or exact
//! Cholesky draws), solves the mild equation spectrally in the Neumann
//! cosine basis, propagates Malliavin derivatives along solved paths, and
//! ships a verifier that checks the quantitative window-norm estimates,
//! the density surrogate, Picard decay, and localization at desk scale.

// negated comparisons in domain checks are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]
#![allow(clippy::too_many_arguments)]

pub mod config;
pub mod error;
pub mod kernel;
pub mod malliavin;
pub mod noise;
pub mod quad;
pub mod solver;
pub mod spectral;
pub mod verify;

pub use config::{ModelConfig, SamplerKind, SolverKind};
pub use error::{Error, Result};
