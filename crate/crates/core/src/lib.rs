//! Diffusions in the space of tempered distributions, simulated through the
//! representation `Y_t(y) = tau_{z_t(y)} y` and checked against closed forms.

pub mod cli;
pub mod distribution;
pub mod error;
pub mod evolution;
pub mod flow;
pub mod hermite;
pub mod monotonicity;
pub mod rng;
pub mod sde;
pub mod sobolev;
pub mod verify;

pub use error::{Error, Result};
