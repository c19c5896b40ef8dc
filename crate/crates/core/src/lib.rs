//! Learning minimal Lindblad models of small open quantum systems from
//! time-resolved tomography counts.
//!
//! The crate is organised bottom-up:
//!
//! - [`pauli`]: Pauli strings, register embedding, connection graphs.
//! - [`model`]: model specifications, parameter packing, and the maps from
//!   real parameters to initial states, Hamiltonians and dissipators.
//! - [`propagator`]: the Lindblad generator, an adaptive Tsit5 integrator
//!   with a discrete adjoint sweep, and a superoperator-exponential oracle.
//! - [`likelihood`]: datasets, predicted outcome probabilities, the
//!   multinomial log-likelihood and its gradient.
//! - [`estimator`]: Adam-based maximum-likelihood fitting and Hessian
//!   uncertainties.
//! - [`selection`]: likelihood-ratio statistics and greedy traversal of the
//!   model lattice.
//! - [`experiment`]: gate library, tomography plans, synthetic data.
//!
//! Units: time in µs, Hamiltonian coefficients in rad/µs, rates in 1/µs.

pub mod error;
pub mod estimator;
pub mod experiment;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod pauli;
pub mod propagator;
pub mod selection;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;
