//! Continuous max-flow multi-region segmentation on regular grids.
//!
//! Three solvers share one machinery — multiplicative (entropic proximal)
//! label updates on the per-voxel simplex plus projected dual steps on
//! spatial flow fields — and differ only in how labels are ordered:
//!
//! * [`potts`]: flat models, every label competing directly;
//! * [`ishikawa`]: linearly ordered labels (each level a subset of its
//!   predecessor);
//! * [`dagmf`]: general directed-acyclic orderings, subsuming trees.
//!
//! Source and sink flows are implicit throughout, which shrinks the working
//! set: the exact voxel-buffer budgets (and the savings against the fully
//! explicit layout) are computed in [`graph`] and asserted by the solver
//! states. [`energy`] scores every labeling against the one shared
//! discretization and provides an exhaustive oracle for tiny instances.

pub mod dagmf;
pub mod energy;
pub mod field;
pub mod graph;
pub mod ishikawa;
pub mod potts;
pub mod solver;

pub use energy::{EnergyError, EnergyReport, RunComparison};
pub use field::{FieldError, GridGeometry, LabelMap, ScalarField, VectorField};
pub use graph::{BufferBudget, DagModel, DagModelBuilder, GraphError, ModelIssue, ModelKind, TopoOrder};
pub use solver::{SolverConfig, SolverError};
