//! Multilevel sampling of Gaussian random fields through a mixed finite
//! element discretisation of an SPDE, with Darcy flow and MCMC drivers.

pub mod chain;
pub mod darcy;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod noise;
pub mod sampler;
pub mod spaces;
pub mod stats;

pub use error::{Error, Result};
