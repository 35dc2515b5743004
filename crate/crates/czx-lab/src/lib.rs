//! Numerical laboratory for CZX (exotic Calderon-Zygmund) kernels on the
//! unit torus/box: shifted dyadic lattices, the full Haar calculus,
//! kernel-estimate verifiers, discretized bilinear forms and their dyadic
//! representation, maximal operators, sparse domination, and weighted
//! experiments including the eccentricity counterexample.

pub mod conv;
pub mod error;
pub mod form;
pub mod grid;
pub mod lattice;
pub mod kernel;
pub mod maximal;
pub mod numerics;
pub mod rep;
pub mod signal;
pub mod weights;

pub use error::{LabError, Result};
pub use grid::{DomainMode, GridGeometry};

/// Library version embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
