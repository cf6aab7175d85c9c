//! Numerical laboratory for probabilistic exact quantum cloning.
//!
//! Builds explicit probabilistic cloning machines for linearly independent
//! state sets, runs them on one arm of an entangled pair with postselection,
//! and evaluates the success-probability bound for cloning one part of a
//! composite system.

pub mod composite;
pub mod epr;
pub mod error;
pub mod haar;
pub mod linalg;
pub mod pqcm;
pub mod report;
pub mod state;

pub use error::{LabError, Result};
pub use linalg::{ComplexMatrix, HilbertLayout, C64};
pub use state::{DensityOperator, MeasurementBasis, PovmSet, StateVector};
