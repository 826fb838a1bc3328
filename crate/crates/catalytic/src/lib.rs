//! Solver and singularity classifier for positive catalytic functional
//! equations with one catalytic variable (k = 1 and k = 2).
//!
//! The crate computes exact truncated series solutions, locates the dominant
//! singularity z0, classifies its type (square root vs 3/2), estimates
//! coefficient asymptotics `M_n ~ c_j n^{-1-alpha} z0^{-n}` per residue class,
//! and derives central-limit parameters for marked equations. Every analytic
//! prediction is cross-checked against the exact coefficient oracle.

pub mod equation;
pub mod fit;
pub mod gh;
pub mod fixtures;
pub mod linear;
pub mod nonlinear;
pub mod numeric;
pub mod poly;
pub mod rat;
pub mod series;
pub mod structure;

pub use equation::{build_r_form, parse_equation, CatalyticEquation, Linearity, Mode, RForm};
pub use rat::Rat;
