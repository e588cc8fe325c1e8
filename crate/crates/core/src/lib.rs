//! Input-constraint-compatible tuning for tunable input-to-state safe (TISSf)
//! control barrier functions.
//!
//! The offline side samples the safe set, evaluates the compatibility exponent
//! `η(x) = ln‖d‖² − ln(c + σ_U(d))` and solves a two-variable LP for the
//! exponential tuning function `ε(h) = ε₀ e^{λh}`. The online side is a QP
//! safety filter that stays feasible on the whole safe set for such tunings.

pub mod convex_sets;
pub mod error;
pub mod linalg;
pub mod plants;
pub mod lp_solver;
pub mod qp_filter;
pub mod sim;
pub mod synthesis;
pub mod tissf;

pub use convex_sets::InputSet;
pub use error::{Error, Result};
