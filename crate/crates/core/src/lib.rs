//! Desk-scale numerical toolkit for log-concave measures on `R^d`, `d <= 4`.
//!
//! The crate builds measures from potential expressions or tabulated grids and
//! then *verifies* the classical inequalities they are supposed to satisfy,
//! reporting margins and counterexample locations instead of silently trusting
//! the theory:
//!
//! * midpoint log-concavity and `alpha`-super-log-concavity certificates,
//! * Prékopa–Leindler and Brunn–Minkowski inequalities on grids,
//! * closure of log-concavity under convolution, marginals, convex
//!   reweighting, products and linear pushforwards,
//! * a finite-dimensional Gaussian calculus: Carleman–Fredholm determinants,
//!   divergences, Jacobians of shifts `U = I + u`, change-of-variables
//!   inequalities, Ornstein–Uhlenbeck smoothing and Mehler averages,
//! * monotone-rearrangement transport on the line, Lipschitz estimates for
//!   Gaussian-to-log-concave maps, and logarithmic Sobolev inequalities.
//!
//! Everything is deterministic: quadratures are fixed-order (composite
//! Simpson, Gauss–Hermite), and every sampled check takes an explicit seed.
//!
//! | module | contents |
//! |--------|----------|
//! | [`expr`] | potential/density expression DSL: parse, eval, grad, hess |
//! | [`grid`] | box domains, tensor grids, quadrature, (de)serialization |
//! | [`measure`] | measure construction: discretize, weight, product, pushforward |
//! | [`report`] | pass/fail/inconclusive check reports with margins and witnesses |
//! | [`logconcave`] | log-concavity checks, Prékopa–Leindler, Brunn–Minkowski, smoothing |
//! | [`gauss`] | Gauss–Hermite spaces, shifts, `det2`, Jacobians, OU semigroup |
//! | [`transport`] | 1D CDF/quantile/monge machinery and log-Sobolev verification |

#![forbid(unsafe_code)]

pub mod expr;
pub mod gauss;
pub mod grid;
pub mod logconcave;
pub mod measure;
pub mod report;
pub mod transport;

pub use expr::{DiffConfig, Expr};
pub use grid::{BoxDomain, GridDensity};
pub use report::{CheckReport, Verdict};

/// Natural log used for a grid value of exactly zero when the surrounding
/// inequality still has to produce a finite, serializable margin (a zero
/// midpoint between two positive endpoints is a genuine violation, not a
/// vacuous case). `exp(LOG_ZERO)` underflows to `0.0`, so the sentinel is
/// consistent with the densities it stands in for.
pub const LOG_ZERO: f64 = -745.2;
