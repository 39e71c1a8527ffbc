//! Entropy production and fluctuations of slowly driven level systems.

pub mod continuum;
pub mod crossing;
pub mod error;
pub mod numerics;
pub mod microstate;
pub mod par;
pub mod scenario;
pub mod spectra;
pub mod thermo;

pub use error::{Error, Result};
pub use par::Exec;
