//! Simulation and verification toolkit for nonholonomic mechanical systems on
//! Riemannian configuration spaces.
//!
//! A system is a chart with a metric, a potential, and a constraint
//! distribution spanned by frame fields. The library integrates the
//! constrained dynamics in adapted coordinates, relates trajectories of the
//! mechanical system to geodesics of the conformally rescaled kinetic system
//! on a fixed energy level, and exposes the induced exponential-type maps.
//!
//! Start with [`systems::builtin`] for the bundled benchmark systems, or build
//! a [`geometry::SystemDefinition`] from closures.

pub mod dynamics;
pub mod error;
pub mod expmap;
pub mod geometry;
pub mod maupertuis;
pub mod quad;
pub mod solver;
pub mod systems;

pub use dynamics::{AdaptedState, JacobiField, MechanicalField, PhaseField, Trajectory};
pub use error::{Error, Result};
pub use expmap::{ExpGrid, ExpOptions};
pub use geometry::SystemDefinition;
pub use maupertuis::{EnergyShellPoint, VerificationReport, VerifyOptions};
pub use solver::{IntegrateOptions, Method};
