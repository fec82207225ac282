//! Semi-analytic solver for constrained mechanical multibody systems.
//!
//! The equations of motion of a multibody system with holonomic constraints
//! form an index-3 differential-algebraic system
//!
//! ```text
//! dp/dt = v
//! M(p) dv/dt = f(p, v) - Gᵀ(p) λ,      G = ∂g/∂p
//! 0 = g(p)
//! ```
//!
//! where `p` are generalized coordinates, `v` velocities, and `λ` the
//! Lagrange multipliers that carry the constraint forces. Instead of
//! reducing the index (which invites constraint drift), this crate expands
//! `p`, `v`, and `λ` in Adomian series and determines the components order
//! by order. Every order costs one linear solve against the same constant
//! saddle-point structure: the mass matrix at the initial configuration and
//! its constraint Schur complement. The result is a truncated power series
//! in `t` for all three variable groups, valid near the expansion point and
//! extendable over longer horizons by restarting on subintervals.
//!
//! Module layout:
//!
//! - [`expr`]: expression trees, parsing, evaluation, symbolic derivatives.
//! - [`series`]: truncated time polynomials and graded-series composition.
//! - [`adomian`]: Adomian polynomial sequences for scalar, vector, and
//!   matrix nonlinearities.
//! - [`linalg`]: dense LU, Schur complements, structural diagnostics.
//! - [`solver`]: the order-by-order recursion and the multistage driver.
//! - [`harness`]: JSON system configs, CSV export, residual reports, CLI.

pub mod adomian;
pub mod expr;
pub mod harness;
pub mod linalg;
pub mod series;
pub mod solver;
