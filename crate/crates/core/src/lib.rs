//! Solvers for backward SDEs whose generators are dominated by
//! `α + βy + γ·z + δ|z|²/y` and therefore singular at `y = 0`, together with
//! the associated semilinear parabolic PDEs and two portfolio applications.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`], [`paths`], [`quadrature`]: time grids, seeded Brownian
//!   increments with optional drift shifts, Gauss–Hermite rules.
//! * [`expr`]: a small expression language for user coefficients.
//! * [`generators`]: generator specs, conjugates, truncations and
//!   integrability reports.
//! * [`transforms`]: the power change of variable and the exact solutions it
//!   yields.
//! * [`sde`]: Euler and projected-Euler simulation of forward diffusions.
//! * [`bsde`]: least-squares Monte Carlo, truncation ladders and dual bounds.
//! * [`pde`]: probabilistic, transform, series and finite-difference
//!   evaluation of the PDE.
//! * [`finance`]: utility maximization and recursive utility.

pub mod bsde;
pub mod error;
pub mod expr;
pub mod finance;
pub mod func;
pub mod generators;
pub mod grid;
pub mod optim;
pub mod paths;
pub mod pde;
pub mod quadrature;
pub mod sde;
pub mod solution;
pub mod stats;
pub mod terminal;
pub mod transforms;

pub use error::{Error, Result};
pub use func::{FieldFn, TimeFn};
pub use grid::TimeGrid;
pub use paths::{make_paths, PathBundle, StateArray};
pub use quadrature::{gauss_expect, QuadratureRule};
pub use solution::BSDESolution;
pub use stats::Estimate;
pub use terminal::Terminal;
