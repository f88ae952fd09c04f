//! Emission-aware planning for gas pipeline networks.
//!
//! The steady-state gas flow physics couple flow and squared pressure through
//! `phi*|phi| = omega * (A^T pi)` per pipeline. That relation is non-convex, so
//! planning models here replace it with a trained piecewise-linear surrogate:
//! the flow term splits into a convex part `max(0,phi)^2` and a concave part
//! `-max(0,-phi)^2`, each approximated by a small sign-constrained ReLU network
//! whose exact hyperplane envelope is embedded in a mixed-integer linear
//! program through indicator (big-M) optimality conditions.
//!
//! Module map:
//! - [`netmodel`]: network data model, JSON loading, validation, incidence matrix
//! - [`physics`]: exact flow equations, residuals, Newton feasibility restoration
//! - [`icnn`]: sign-constrained ReLU nets, training, hyperplane enumeration, envelopes
//! - [`compile`]: MILP compilation (envelope indicator form and tangent-cut relaxation)
//! - [`solve`]: dense bounded simplex, branch and bound, MPS export/import
//! - [`pipeline`]: end-to-end train/plan/expand runs shared by the CLI and bindings
//! - [`report`]: run reports (JSON document plus aligned text table)

pub mod compile;
pub mod icnn;
pub mod netmodel;
pub mod physics;
pub mod pipeline;
pub mod report;
pub mod solve;
