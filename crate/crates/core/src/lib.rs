//! Multi-scale Jacobi diagonalization of the Anderson tight-binding model.
//!
//! The pipeline starts from the lattice Hamiltonian `H = V - J0 * (nearest-neighbour hopping)`
//! and repeatedly applies two kinds of orthogonal rotations:
//!
//! * perturbative rotations `exp(-A)` that remove nonresonant couplings of the current
//!   length scale, with `A_xy = J_xy / (E_x - E_y)`;
//! * exact Jacobi diagonalization of small resonant blocks.
//!
//! Length scales grow geometrically, `L_k = (15/8)^k`, and the off-diagonal part of the
//! effective Hamiltonian shrinks super-exponentially outside resonant regions. The product
//! of all rotations converges to the eigenvector matrix; its columns are labeled by sites.
//!
//! [`oracle`] holds an independent dense Jacobi eigensolver used as ground truth.

pub mod blocks;
pub mod driver;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod rotor;

pub use blocks::{BlockRegistry, ResonanceParams, ResonantBlock, ResonantLink, ScaleWindow};
pub use driver::{run_to_convergence, FinalDiagonalization, ScaleState, Schedule, StepMetrics};
pub use lattice::{ContractedMetricView, LatticeGeometry, Site};
pub use model::{build_hamiltonian, sample_potential, DisorderConfig, DisorderKind, Hamiltonian};
pub use oracle::{dense_jacobi_eigensolve, EigenDecomposition};
pub use rotor::{Generator, OrthogonalRotation};
