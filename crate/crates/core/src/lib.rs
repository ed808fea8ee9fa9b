//! Curriculum and structure-aware optimal transport.
//!
//! Solvers for entropic OT (Sinkhorn), curriculum OT with relaxed row
//! constraints (Dykstra and the efficient scaling iteration), and the
//! structure-aware nonconvex objective solved by generalized conditional
//! gradient. On top sit the pseudo-labeling allocator, a synthetic
//! noisy-label simulator, and a solver timing harness.

pub mod bench;
pub mod curriculum;
pub mod csot;
pub mod error;
pub mod features;
pub mod io;
pub mod matrix;
pub mod problem;
pub mod relabel;
pub mod simlab;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use matrix::{DenseMatrix, ExecMode, Marginal};
pub use problem::{ConstraintKind, SolveReport, StructureContext, TransportProblem};
