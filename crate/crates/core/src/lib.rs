//! Numerical core for power-density inversion posed as a redundant elliptic
//! system.
//!
//! Given internal functionals `H_j = γ|∇u_j|²`, where each `u_j` solves
//! `∇·γ∇u_j = 0` with Dirichlet data `f_j`, this crate provides
//!
//! * grids, fields and second-order finite-difference stencils ([`grid`],
//!   [`field`], [`diff`]);
//! * the conservative conductivity solver and data synthesis ([`forward`]);
//! * pointwise symbol verdicts: collective ellipticity of the quadratic forms
//!   `q_j(ξ) = 2(F̂_j·ξ)² − |ξ|²`, the reduced Lopatinskii check, tangential
//!   unique-continuation criteria and root classification ([`symbol`]);
//! * assembly of the linearized, eliminated and triangular systems and their
//!   Cauchy-constrained normal equations ([`linearized`]);
//! * the frozen-Jacobian fixed-point reconstruction ([`reconstruct`]);
//! * the stability sweep and ellipticity catalog ([`experiments`]).
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod diff;
pub mod error;
pub mod experiments;
pub mod field;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod linearized;
pub mod reconstruct;
pub mod sparse;
pub mod symbol;

mod vecmath;

pub use error::{Error, Result};
pub use field::{BoundaryData, ScalarField, TraceKind, VectorField};
pub use grid::{Face, Grid};
