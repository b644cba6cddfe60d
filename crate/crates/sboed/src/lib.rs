//! Sequential Bayesian optimal experimental design (SBOED) for a
//! time-dependent reaction-diffusion model with a Gaussian random-field
//! parameter, accelerated by a derivative-informed latent attention
//! surrogate.
//!
//! The library is organized around the pipeline
//!
//! ```text
//! geometry/prior -> forward model -> adjoints -> Laplace posterior
//!        |                                           |
//!        +--> reduction (DIS + PCA) --> surrogate ---+--> design loop
//! ```
//!
//! Everything is deterministic for fixed seeds; randomness is funneled
//! through named [`rng`] streams.

pub mod adjoint;
pub mod config;
pub mod design;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod laplace;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod prior;
pub mod reduction;
pub mod rng;
pub mod surrogate;
pub mod verify;
pub mod workflow;

pub use error::{Error, Result};
