//! Dyadic cubes, adapted families and Haar-multiplier norm experiments on
//! discrete tori.

pub mod adapt;
pub mod cubes;
pub mod error;
pub mod haar;
pub mod model;
pub mod norms;
pub mod region;
pub mod scalar;
pub mod shift;
pub mod stripe;

pub use cubes::{build_system, Cube, DyadicSystem};
pub use error::{Error, Result};
pub use model::{Measure, SpaceKind, SpaceModel};
pub use region::Region;
pub use scalar::Scalar;
pub use haar::{CellFunction, HaarSystem};

/// Floating-point scalar used by the norm experiments.
pub type Real = f64;
/// Exact rational scalar for conditional expectations and Haar coefficients.
pub type Exact = num_rational::Rational64;
pub type CellFunction64 = CellFunction<Real>;
pub type ExactCellFunction = CellFunction<Exact>;
