//! Bound-state perturbation theory built on the pole/background split of the
//! unperturbed Green function, for kernels and free Green functions that may
//! depend on energy.

pub mod linalg;

pub use linalg::{CMatrix, CVector};
