//! Model specification, hopping tables and finite Hamiltonians.

mod build;
mod disorder;
mod homotopy;
mod jacobi;
mod lattice;
mod spec;

pub use build::{build, build_hamiltonian, Geometry, HamiltonianMatrix};
pub use disorder::{Disorder, GENERATOR};
pub use homotopy::{apply_homotopy, apply_homotopy_matrix, commutator_norm, spin_diagonal_part, Homotopy};
pub use jacobi::{to_jacobi_form, JacobiForm, SHIFTS};
pub use lattice::{Hop, LatticeGeometry, TightBinding};
pub use spec::{Flux, Lattice, ModelSpec, RashbaRange};
