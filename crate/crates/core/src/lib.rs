//! Mirror descent, natural gradient descent, and the Riemannian gradient
//! flow treated as three discretizations of the same differential equation
//! `dw/dt = -H(w)^{-1} grad F(w)`:
//!
//! - **Natural gradient descent** freezes both the gradient and the metric
//!   at each breakpoint (full forward Euler).
//! - **Mirror descent** freezes only the gradient and follows the metric
//!   exactly in between. When `H = hess psi` this reproduces the classic
//!   link-function update `link(w+) = link(w) - eta grad F(w)`; for metrics
//!   that are not Hessian maps the same per-step ODE still defines a valid
//!   first-order method with a single gradient access per iteration.
//! - **The flow itself** is the common zero-stepsize limit and the
//!   reference the discretizations are measured against.
//!
//! The [`analysis`] module carries the verification machinery: a
//! finite-difference Hessian-map checker (`d_k H_ij = d_j H_ik`), the
//! classic-vs-ODE equivalence check, an eigenvalue-banded linear convergence
//! bound, Bregman projections / KKT residuals for implicit-bias experiments,
//! chart-transport studies, and discretization-order sweeps.
//!
//! Batched point loops (checker samples, sweep grids, experiment batches)
//! run through [`batch`], which fans out over rayon when the `parallel`
//! feature (default) is enabled and degrades to sequential iteration when it
//! is not.

pub mod analysis;
pub mod batch;
pub mod geometry;
pub mod integrators;
pub mod objectives;
pub mod optimizers;
pub mod potentials;

pub use geometry::{local_distance, make_builtin_metric, metric_solve, Metric, MetricSpec, Point};
pub use integrators::{integrate_flow, mirrorless_step, Trajectory};
pub use objectives::{gradient_check, make_builtin_objective, Objective, ObjectiveSpec};
pub use optimizers::{
    md_step_classic, ngd_step, run_method, run_two_scale_stochastic, Geometry, Method, RunConfig,
};
pub use potentials::{bregman_divergence, make_builtin_potential, Potential, PotentialSpec};
