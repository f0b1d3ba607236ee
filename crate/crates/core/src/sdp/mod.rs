//! Convex optimization: LMI programs, the interior-point solver, spectral-norm
//! minimization and contractive extensions.

pub mod extension;
pub mod ipm;
pub mod lmi;
pub mod spectral;

pub use ipm::{solve, IpmSolution, SolveStatus, SolverOptions};
pub use lmi::{free_complex_matrix, free_hermitian, AffineHerm, AffineMat, LmiProgram};
pub use spectral::{solve_spectral_min, solve_spectral_min_with, SolveResult, SpectralBlock, SpectralProgram};
