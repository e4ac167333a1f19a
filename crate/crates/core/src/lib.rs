//! Stochastic Hamiltonian dynamics on Poisson phase spaces.
//!
//! The crate simulates Stratonovich equations of the form
//! `δΓ = Σ_j X_{h_j}(Γ) δX^j`, where the `h_j` are the components of a
//! vector-valued Hamiltonian on a chart carrying a Poisson tensor and the
//! `X^j` are the components of a continuous semimartingale driver. On top of
//! the integrators it provides the machinery needed to check the structural
//! properties such systems are expected to satisfy numerically: pathwise and
//! in-mean conservation laws, symplectic-form preservation along the tangent
//! flow, Casimir/leaf preservation, stability certificates, and the critical
//! action principles on exact symplectic charts.
//!
//! Module map:
//!
//! - [`structures`]: Poisson tensors, scalar fields, Hamiltonian bundles,
//!   brackets and Hamiltonian vector fields.
//! - [`noise`]: driver semimartingales sampled on uniform grids with analytic
//!   quadratic-covariation rates.
//! - [`calculus`]: discretized stochastic line integrals (midpoint and
//!   left-point rules) and the Hamilton-equation residual.
//! - [`integrators`]: Heun (Stratonovich) and corrected Euler (Itô) one-step
//!   schemes, full-path simulation, and the tangent (variational) flow.
//! - [`montecarlo`]: reproducible ensembles, expectation estimators, stopping
//!   times, and exceedance probabilities.
//! - [`diagnostics`]: conservation/involution/Liouville/stability checks with
//!   explicit tolerances.
//! - [`variational`]: the stochastic action on exact symplectic charts and
//!   both critical action principles.
//! - [`systems`]: a catalog of ready-to-run example systems with closed-form
//!   oracles and moment ODEs.

pub mod calculus;
pub mod diagnostics;
pub mod error;
pub mod integrators;
pub mod montecarlo;
pub mod noise;
pub mod structures;
pub mod systems;
pub mod variational;

pub use error::{Error, Result};
