//! Steady periodic stratified gravity water waves.
//!
//! The unknown is the height `h(q, p)` of each streamline above the bed,
//! written in semi-Lagrangian coordinates (horizontal position `q`, streamline
//! label `p`). The crate computes the laminar family, locates the bifurcation
//! point on it, continues the bifurcating branch of periodic waves, and maps
//! solutions back to velocity, density and pressure for verification.
//!
//! Modules, bottom up:
//!
//! - [`profiles`]: problem data and admissibility checks
//! - [`laminar`]: the flat-surface shear flows and their λ-derivatives
//! - [`sturm`]: the linearized eigenproblem, bifurcation point, transversality
//! - [`heightpde`]: discrete height equation, Jacobian, Newton solves
//! - [`continuation`]: branch switching and pseudo-arclength continuation
//! - [`reconstruct`]: physical variables and Euler-system residuals

pub mod continuation;
pub mod heightpde;
pub mod interp;
pub mod io;
pub mod laminar;
pub mod ode;
pub mod profiles;
pub mod quad;
pub mod reconstruct;
pub mod roots;
pub mod sturm;

pub use profiles::{BernoulliProfile, DensityProfile, FlowParams, ProfileBundle, Shape};
