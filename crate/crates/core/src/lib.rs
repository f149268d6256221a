//! Numerical toolkit for sub-Riemannian normal geodesics: Hamiltonian flow
//! of frame-defined structures, the end-point map and its corank, branching
//! families, the glued Martinet–Heisenberg example and product realizations
//! of corank functions.

pub mod branching;
pub mod endpoint;
pub mod error;
pub mod expr;
pub mod flow;
pub mod numerics;
pub mod structures;

pub use error::{Error, Result};
pub use numerics::{IntegratorSpec, Method};
pub use structures::{SRStructure, StructureDescriptor, StructureKind};
pub use flow::{CotangentState, GeodesicTrace};
