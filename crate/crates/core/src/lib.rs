//! Finite-time-step measurement maps for diffusive unravelings of Lindblad
//! master equations.
//!
//! The crate builds the Itô, Rouchon-Ralph, `gw` (Itô with a quartic
//! completeness correction) and W measurement operators together with the exact maps for a Hermitian (z) measurement and
//! for qubit fluorescence, averages them into channels, measures the order in
//! `Δt` to which each map reproduces Lindblad evolution, and benchmarks
//! single-step conditioned states against the exact maps.

pub mod benchmark;
pub mod channels;
pub mod error;
pub mod linalg;
pub mod maps;
pub mod random;
pub mod sampling;
pub mod validators;

pub use error::{Error, Result};
pub use linalg::{Channel, ComplexMatrix, DensityMatrix, Tolerances, C64};
pub use maps::{Coupling, MapKind, RecordSample};
