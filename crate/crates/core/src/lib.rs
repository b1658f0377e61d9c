//! Random walks in i.i.d. random environments with a forbidden direction:
//! lazy environments, walk engines, exact quenched dynamic programming,
//! regeneration-based estimators and an exact integer-direction solver.

pub mod direction;
pub mod environment;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod lattice;
pub mod model;
pub mod quenched;
pub mod rng;
pub mod walker;

pub use environment::{Environment, SiteLaws};
pub use error::{Error, Result};
pub use lattice::LatticePoint;
pub use model::{validate_model, ModelSpec, StepLaw, ValidationReport};
