//! Parallel refractors: hyperboloid envelopes that refract a vertical beam
//! leaving a dense medium onto a finite set of target points with prescribed
//! energies, together with numerical checks of the regularity theory.

pub mod error;
pub mod analysis;
pub mod cli;
pub mod geometry;
pub mod raytrace;
pub mod refractor;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
