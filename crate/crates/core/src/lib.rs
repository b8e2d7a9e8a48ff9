//! Normalizing flows on SO(3) expressed in Euler angles.
//!
//! Rotations are mapped to the torus of `(omega, phi, kappa)` angles and modelled
//! with a stack of coupling layers. Each layer moves one angle through a convex
//! combination of circle Möbius transforms whose parameters come from a small
//! network reading the other two angles (and an optional context vector). The
//! transformed angle cycles omega, phi, kappa from layer to layer.

pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod flow;
pub mod mobius;
pub mod neural;
pub mod rotation;
pub mod train;

pub use error::{Error, Result};
