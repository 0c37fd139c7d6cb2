//! Local time integration for two-field linear wave systems.
//!
//! The crate discretizes systems of the form
//!
//! ```text
//!     d/dt u = L2 v + g_u,        d/dt v = L1 u + g_v,
//! ```
//!
//! where the two spatial operators are skew-adjoint to each other in
//! material-weighted inner products, by a central-flux discontinuous
//! Galerkin method on Cartesian meshes.  Time stepping uses a filtered
//! leapfrog scheme: one step reads
//!
//! ```text
//!     v*      = v^n + tau/2 (L1 u^n + g_v)
//!     u^{n+1} = u^n + tau Psi(tau^2 S_M) (L2 v* + g_u)
//!     v^{n+1} = v*  + tau/2 (L1 u^{n+1} + g_v)
//! ```
//!
//! with `S_M = -L2 chi_M L1` the second-order operator masked to the locally
//! refined part of the mesh.  The filter `Psi` selects the integrator:
//! identity (plain leapfrog), `(1 + z/4)^-1` (locally implicit
//! Crank-Nicolson), or a shifted Chebyshev polynomial (stabilized
//! leapfrog-Chebyshev).  Filtering only the refined region lets the step
//! size be chosen by the coarse cells instead of the finest ones.
//!
//! Module layout:
//! * [`mesh`] - interval and tensor-product meshes, fine/coarse partitions,
//!   cutoff masks.
//! * [`dgspace`] - modal tensor-Legendre dG spaces, projections, weighted
//!   inner products.
//! * [`operators`] - matrix-free first-order operator pairs, masked
//!   second-order compositions, norm estimation, dense assembly.
//! * [`filters`] - filter functions, their stability constants, and the
//!   matrix-function application `Psi(tau^2 S_M) w`.
//! * [`integrators`] - CFL bounds, the step itself, trajectory driver, and
//!   a dense one-step oracle for validation.
//! * [`problems`] - the built-in model problems and error measurement.
//! * [`config`] / [`experiments`] - experiment configuration files and the
//!   convergence / stabilization / runtime studies exposed by the CLI.

pub mod config;
pub mod dgspace;
pub mod experiments;
pub mod filters;
pub mod integrators;
pub mod mesh;
pub mod operators;
pub mod problems;
