//! Gyrokinetic particle-in-cell turbulence miniapp on a field-aligned toroidal grid.
//!
//! The simulation advances a delta-f ion population through the six-kernel
//! cycle charge -> poisson -> field -> smooth -> push -> shift on a circular
//! equilibrium, with a 2D (toroidal x radial) domain decomposition plus
//! particle decomposition over in-process logical ranks.

pub mod config;
pub mod deposit;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod fieldsolve;
pub mod geometry;
pub mod particles;
pub mod push;
pub mod transport;

pub use config::RunParams;
pub use error::{Error, Result};
