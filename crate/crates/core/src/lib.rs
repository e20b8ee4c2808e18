//! Homogenised Landau-de Gennes potentials for polydisperse nematic colloids.
//!
//! The crate covers the Q-tensor algebra, energy densities, a catalogue of
//! convex reference bodies with surface quadrature, homogenised surface
//! potentials and their inverse design, a finite-difference minimiser for the
//! homogenised functional, and the ε-family of colloidal functionals used to
//! check the homogenisation limits numerically.

pub mod error;
pub mod qtensor;
pub mod energy;
pub mod quadrature;
pub mod shapes;
pub mod homogenize;
pub mod grid;
pub mod solver;
pub mod colloid;
pub mod verify;
pub mod config;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use qtensor::{deviatoric, dot, q_nu, Mat3, QTensor, Rotation, SymMatrix, UnitVector, Vec3};
pub use energy::{BulkParams, ElasticParams, SurfaceDensity};
pub use shapes::Shape;
pub use homogenize::{design_linear_term, DesignSpec, Species};
pub use grid::{BoundaryData, GridSpec, Initialization, TensorField};
pub use solver::{minimize, EnergyReport, HomPotential, Material, MinimizeOptions, MinimizeOutcome, Status};
pub use colloid::{ColloidConfig, ColloidProblem, Container, InclusionLattice, SweepRow};
pub use config::RunConfig;
