//! Verification machinery: the Hessian-map checker, the classic-vs-ODE
//! mirror-descent equivalence check, the eigenvalue-banded convergence
//! bound, Bregman projections and KKT residuals for implicit-bias
//! experiments, and chart-transport / discretization-order studies.

mod charts;

pub use charts::{
    make_builtin_chart, pullback_metric, AffineChart, ChartMap, ChartSpec, CubicChart,
    PullbackMetric, BUILTIN_CHARTS,
};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::batch;
use crate::geometry::{GeometryError, Metric, Point};
use crate::integrators::{
    integrate_flow_sampled, integrate_flow_until, IntegratorError, StopRule, Trajectory,
};
use crate::objectives::{LeastSquares, Objective, ObjectiveError};
use crate::optimizers::{
    run_method, Geometry, Method, MirrorlessMode, OptimizerError, RunConfig,
};
use crate::potentials::{Potential, PotentialError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid analysis input: {0}")]
    InvalidInput(String),
    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),
    #[error("eigenvalue bound violated at iterate {iteration}: spectrum [{lambda_min:.6}, {lambda_max:.6}] outside [{alpha:.6}, {beta:.6}]")]
    EigenBoundViolated { iteration: usize, lambda_min: f64, lambda_max: f64, alpha: f64, beta: f64 },
    #[error("Newton projection did not converge after {iterations} iterations (feasibility {residual:.3e})")]
    ProjectionDidNotConverge { iterations: usize, residual: f64 },
    #[error("run failed at iteration {iteration}: {message}")]
    RunFailed { iteration: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

fn require_success(traj: &Trajectory) -> Result<(), AnalysisError> {
    match &traj.failure {
        None => Ok(()),
        Some(f) => Err(AnalysisError::RunFailed { iteration: f.iteration, message: f.message.clone() }),
    }
}

// ---------------------------------------------------------------------------
// Hessian-map checker
// ---------------------------------------------------------------------------

/// Argmax record of the symmetry violation `|d_k H_ij - d_j H_ik|`.
/// `violation` is the raw (unnormalized) finite-difference value; indices
/// are 0-based.
#[derive(Debug, Clone, Serialize)]
pub struct HessianWitness {
    pub point: Vec<f64>,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianMapReport {
    pub is_hessian_map: bool,
    /// Max violation normalized per point by `1 + max |H(w)|`.
    pub max_violation: f64,
    pub witness: Option<HessianWitness>,
    pub points_tested: usize,
    pub fd_step: f64,
    pub tol: f64,
}

pub const HESSIAN_CHECK_DEFAULT_FD_STEP: f64 = 1e-5;
pub const HESSIAN_CHECK_DEFAULT_TOL: f64 = 1e-3;

struct PointViolation {
    normalized: f64,
    witness: HessianWitness,
}

fn hessian_violation_at(
    metric: &dyn Metric,
    w: &DVector<f64>,
    fd_step: f64,
) -> Result<Option<PointViolation>, AnalysisError> {
    let d = metric.dim();
    let base = metric.materialize(w)?;
    // Central differences dH[k] = (H(w + h e_k) - H(w - h e_k)) / 2h; the
    // perturbed points must stay in the domain.
    let mut partials = Vec::with_capacity(d);
    for k in 0..d {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[k] += fd_step;
        wm[k] -= fd_step;
        let hp = metric.materialize(&wp)?;
        let hm = metric.materialize(&wm)?;
        partials.push((hp - hm) / (2.0 * fd_step));
    }
    let norm_factor = 1.0 + base.abs().max();
    let mut best: Option<PointViolation> = None;
    for i in 0..d {
        for j in 0..d {
            for k in (j + 1)..d {
                let raw = (partials[k][(i, j)] - partials[j][(i, k)]).abs();
                let normalized = raw / norm_factor;
                if best.as_ref().is_none_or(|b| normalized > b.normalized) {
                    best = Some(PointViolation {
                        normalized,
                        witness: HessianWitness {
                            point: w.iter().copied().collect(),
                            i,
                            j,
                            k,
                            violation: raw,
                        },
                    });
                }
            }
        }
    }
    Ok(best)
}

fn hessian_map_report(
    results: Vec<Result<Option<PointViolation>, AnalysisError>>,
    fd_step: f64,
    tol: f64,
    points_tested: usize,
) -> Result<HessianMapReport, AnalysisError> {
    let mut max_violation = 0.0f64;
    let mut witness = None;
    for res in results {
        if let Some(v) = res? {
            if v.normalized >= max_violation {
                max_violation = v.normalized;
                witness = Some(v.witness);
            }
        }
    }
    Ok(HessianMapReport {
        is_hessian_map: max_violation <= tol,
        max_violation,
        witness,
        points_tested,
        fd_step,
        tol,
    })
}

/// Check the symmetry condition `d_k H_ij = d_j H_ik` by central differences
/// on materialized entries; it holds everywhere iff `H` is a Hessian map.
pub fn hessian_map_check(
    metric: &dyn Metric,
    sample_points: &[DVector<f64>],
    fd_step: f64,
    tol: f64,
) -> Result<HessianMapReport, AnalysisError> {
    check_fd_params(sample_points, fd_step, tol)?;
    let results = batch::map(sample_points, |w| hessian_violation_at(metric, w, fd_step));
    hessian_map_report(results, fd_step, tol, sample_points.len())
}

/// Sequential twin of [`hessian_map_check`]; reference path for the
/// parallel-vs-serial benchmarks.
pub fn hessian_map_check_seq(
    metric: &dyn Metric,
    sample_points: &[DVector<f64>],
    fd_step: f64,
    tol: f64,
) -> Result<HessianMapReport, AnalysisError> {
    check_fd_params(sample_points, fd_step, tol)?;
    let results = batch::map_seq(sample_points, |w| hessian_violation_at(metric, w, fd_step));
    hessian_map_report(results, fd_step, tol, sample_points.len())
}

fn check_fd_params(points: &[DVector<f64>], fd_step: f64, tol: f64) -> Result<(), AnalysisError> {
    if points.is_empty() {
        return Err(AnalysisError::InvalidInput("no sample points supplied".into()));
    }
    if fd_step <= 0.0 || tol <= 0.0 {
        return Err(AnalysisError::InvalidInput("fd_step and tol must be positive".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Theorem-1 equivalence
// ---------------------------------------------------------------------------

/// Max sup-norm deviation over all iterates between classic MD and the
/// forced-ODE mirrorless run with the same potential, initialization, and
/// stepsize. Passes the spec threshold when `<= 10 * tol * K`.
pub fn theorem1_check(
    psi: &Arc<dyn Potential>,
    obj: &dyn Objective,
    w0: &Point,
    eta: f64,
    iterations: usize,
    tol: f64,
) -> Result<f64, AnalysisError> {
    let geometry = Geometry::from_potential(psi.clone());
    let classic = run_method(
        &RunConfig::new(Method::MdClassic, eta, iterations, w0.clone()).with_tol(tol),
        &geometry,
        obj,
    )?;
    require_success(&classic)?;
    let ode = run_method(
        &RunConfig::new(Method::MdMirrorless, eta, iterations, w0.clone())
            .with_tol(tol)
            .with_mode(MirrorlessMode::ForceOde),
        &geometry,
        obj,
    )?;
    require_success(&ode)?;
    let mut max_dev = 0.0f64;
    for k in 0..classic.len() {
        let dev = (classic.points[k].coords() - ode.points[k].coords()).abs().max();
        max_dev = max_dev.max(dev);
    }
    Ok(max_dev)
}

// ---------------------------------------------------------------------------
// Convergence-rate bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RateBoundReport {
    pub pass: bool,
    pub eta: f64,
    pub fstar: f64,
    /// `bound_k - (F(w_k) - F*)` for each iterate; nonnegative means the
    /// bound holds.
    pub margins: Vec<f64>,
    pub min_margin: f64,
}

/// Run mirrorless MD with the prescribed stepsize `eta = alpha^2 / (gamma
/// beta)` and check the linear-rate bound
/// `F(w_k) - F* <= (F(w_0) - F*) exp(-lambda alpha^2 k / (gamma beta^2))`.
/// The eigenvalue band `alpha I <= H <= beta I` is verified a posteriori at
/// every visited iterate; a violation invalidates the hypothesis and is
/// reported as an error, not as a bound failure.
pub fn rate_bound_check(
    metric: Arc<dyn Metric>,
    obj: &dyn Objective,
    alpha: f64,
    beta: f64,
    w0: &Point,
    iterations: usize,
    ode_tol: f64,
    margin_floor: f64,
) -> Result<RateBoundReport, AnalysisError> {
    if !(alpha > 0.0 && beta >= alpha) {
        return Err(AnalysisError::InvalidInput("need 0 < alpha <= beta".into()));
    }
    let lambda = obj
        .strong_convexity()
        .ok_or_else(|| AnalysisError::InvalidInput("objective lacks a strong convexity constant".into()))?;
    let gamma = obj
        .smoothness()
        .ok_or_else(|| AnalysisError::InvalidInput("objective lacks a smoothness constant".into()))?;
    let fstar = match obj.optimum_hint() {
        Some((_, f)) => f,
        None => {
            // Anchor from a long tight-tolerance flow run.
            let traj = integrate_flow_until(
                metric.as_ref(),
                obj,
                w0,
                StopRule::GradNormBelow(1e-11),
                5.0,
                1e4,
                1e-12,
            )?;
            obj.value(traj.last_point().unwrap().coords())
        }
    };
    let eta = alpha * alpha / (gamma * beta);
    let geometry = Geometry::from_metric(metric.clone());
    let traj = run_method(
        &RunConfig::new(Method::MdMirrorless, eta, iterations, w0.clone()).with_tol(ode_tol),
        &geometry,
        obj,
    )?;
    require_success(&traj)?;

    // Spectrum check at every visited iterate, with a small round-off slack.
    let slack = 1e-9;
    for (k, p) in traj.points.iter().enumerate() {
        let h = metric.materialize(p.coords())?;
        let eigs = h.symmetric_eigenvalues();
        let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo < alpha - slack || hi > beta + slack {
            return Err(AnalysisError::EigenBoundViolated {
                iteration: k,
                lambda_min: lo,
                lambda_max: hi,
                alpha,
                beta,
            });
        }
    }

    let f0 = traj.meta[0].objective - fstar;
    let rate = lambda * alpha * alpha / (gamma * beta * beta);
    let margins: Vec<f64> = traj
        .meta
        .iter()
        .enumerate()
        .map(|(k, m)| f0 * (-rate * k as f64).exp() - (m.objective - fstar))
        .collect();
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RateBoundReport { pass: min_margin >= margin_floor, eta, fstar, margins, min_margin })
}

// ---------------------------------------------------------------------------
// Bregman projection and KKT residual
// ---------------------------------------------------------------------------

/// `argmin_w D_psi(w, w0) s.t. A w = b`, solved by Newton on the `n`-dim
/// dual variable: the KKT conditions are `link(w) = link(w0) + A^T nu`,
/// `A w = b`. Requires independent rows and a feasible system.
pub fn bregman_projection(
    psi: &dyn Potential,
    w0: &Point,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<Point, AnalysisError> {
    const MAX_ITERS: usize = 200;
    const MAX_HALVINGS: usize = 60;
    if a.ncols() != psi.dim() || a.nrows() != b.len() {
        return Err(AnalysisError::InvalidInput("projection constraint dimensions mismatch".into()));
    }
    let z0 = psi.link(w0.coords())?;
    let feas_tol = 1e-10 * (1.0 + b.norm());
    let n = a.nrows();
    let mut nu = DVector::zeros(n);

    let point_at = |nu: &DVector<f64>| -> Result<DVector<f64>, AnalysisError> {
        let z = &z0 + a.transpose() * nu;
        Ok(psi.inverse_link(&z)?)
    };
    let mut w = point_at(&nu)?;
    let mut residual = a * &w - b;
    for _ in 0..MAX_ITERS {
        if residual.norm() <= feas_tol {
            return Ok(Point::with_chart(w, w0.chart()));
        }
        // Jacobian of nu -> A w(nu) is A (hess psi)^{-1} A^T, SPD for
        // independent rows.
        let hinv_at = psi.hessian_diag(&w)?;
        let j = match hinv_at {
            Some(d) => {
                let scaled = DMatrix::from_fn(n, a.ncols(), |r, c| a[(r, c)] / d[c]);
                &scaled * a.transpose()
            }
            None => {
                let h = psi.hessian(&w)?;
                let chol = Cholesky::new(h).ok_or_else(|| {
                    AnalysisError::InvalidInput("potential Hessian not SPD during projection".into())
                })?;
                a * chol.solve(&a.transpose())
            }
        };
        let chol = Cholesky::new(j).ok_or_else(|| {
            AnalysisError::InvalidInput("projection system singular: are the rows of A independent?".into())
        })?;
        let delta = chol.solve(&(-&residual));
        let base = residual.norm_squared();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &nu + &delta * t;
            if let Ok(wc) = point_at(&cand) {
                if wc.iter().all(|x| x.is_finite()) {
                    let r = a * &wc - b;
                    if r.norm_squared() <= (1.0 - 1e-4 * t) * base {
                        nu = cand;
                        w = wc;
                        residual = r;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(AnalysisError::ProjectionDidNotConverge {
                iterations: MAX_ITERS,
                residual: residual.norm(),
            });
        }
    }
    if residual.norm() <= feas_tol {
        return Ok(Point::with_chart(w, w0.chart()));
    }
    Err(AnalysisError::ProjectionDidNotConverge { iterations: MAX_ITERS, residual: residual.norm() })
}

/// Norm of the component of `link(w_final) - link(w0)` orthogonal to the row
/// space of `A`, normalized by `1 + ||link(w_final) - link(w0)||`. Zero iff
/// the dual displacement satisfies the projection KKT conditions.
pub fn kkt_residual(
    psi: &dyn Potential,
    w0: &Point,
    w_final: &Point,
    a: &DMatrix<f64>,
) -> Result<f64, AnalysisError> {
    let delta = psi.link(w_final.coords())? - psi.link(w0.coords())?;
    let gram = a * a.transpose();
    let chol = Cholesky::new(gram).ok_or_else(|| {
        AnalysisError::InvalidInput("rows of A are not independent".into())
    })?;
    let nu = chol.solve(&(a * &delta));
    let orth = &delta - a.transpose() * nu;
    Ok(orth.norm() / (1.0 + delta.norm()))
}

// ---------------------------------------------------------------------------
// Implicit-bias closure
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ImplicitBiasReport {
    pub flow_endpoint: Vec<f64>,
    pub projection: Vec<f64>,
    /// `||flow - projection||_inf / max(1, ||projection||_inf)`.
    pub relative_gap: f64,
    pub kkt_residual: f64,
    pub final_objective: f64,
    pub flow_time: f64,
}

/// Run the gradient flow under `hess psi` on an underdetermined least-squares
/// objective until the objective drops below `f_target`, then compare the
/// endpoint to the Bregman projection of `w0` onto the solution set.
pub fn implicit_bias_closure(
    psi: &Arc<dyn Potential>,
    lsq: &LeastSquares,
    w0: &Point,
    f_target: f64,
    max_time: f64,
    ode_tol: f64,
) -> Result<ImplicitBiasReport, AnalysisError> {
    let metric = crate::potentials::potential_to_metric(psi.clone());
    let traj = integrate_flow_until(
        metric.as_ref(),
        lsq,
        w0,
        StopRule::ObjectiveBelow(f_target),
        2.0,
        max_time,
        ode_tol,
    )?;
    let endpoint = traj.last_point().unwrap().clone();
    let projection = bregman_projection(psi.as_ref(), w0, lsq.design(), lsq.targets())?;
    let gap = (endpoint.coords() - projection.coords()).abs().max()
        / (1.0f64).max(projection.coords().abs().max());
    let kkt = kkt_residual(psi.as_ref(), w0, &endpoint, lsq.design())?;
    Ok(ImplicitBiasReport {
        flow_endpoint: endpoint.to_vec(),
        projection: projection.to_vec(),
        relative_gap: gap,
        kkt_residual: kkt,
        final_objective: lsq.value(endpoint.coords()),
        flow_time: *traj.times.last().unwrap(),
    })
}

// ---------------------------------------------------------------------------
// Chart transport
// ---------------------------------------------------------------------------

/// The objective seen through a chart change: `F~(w~) = F(g^{-1}(w~))` with
/// gradient `J^{-T} grad F`.
pub struct TransformedObjective {
    base: Arc<dyn Objective>,
    chart: Arc<dyn ChartMap>,
}

impl TransformedObjective {
    pub fn new(base: Arc<dyn Objective>, chart: Arc<dyn ChartMap>) -> Self {
        Self { base, chart }
    }
}

impl Objective for TransformedObjective {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn name(&self) -> String {
        format!("{}∘{}⁻¹", self.base.name(), self.chart.name())
    }

    fn value(&self, w_tilde: &DVector<f64>) -> f64 {
        match self.chart.inverse(w_tilde) {
            Ok(w) => self.base.value(&w),
            Err(_) => f64::NAN,
        }
    }

    fn gradient(&self, w_tilde: &DVector<f64>) -> DVector<f64> {
        match self.chart.inverse(w_tilde) {
            Ok(w) => {
                let g = self.base.gradient(&w);
                let jt = self.chart.jacobian(&w).transpose();
                match jt.lu().solve(&g) {
                    Some(sol) => sol,
                    None => DVector::from_element(self.dim(), f64::NAN),
                }
            }
            Err(_) => DVector::from_element(self.dim(), f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportReport {
    /// `||g(w_k) - w~_k||_inf` per iterate.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

/// Run the same method in the original chart and in the transformed chart
/// (pullback metric, transformed objective, mapped initialization) and
/// report the per-iterate gap between the mapped original iterates and the
/// transformed-chart iterates. The flow is chart-invariant; finite-stepsize
/// MD is invariant only for affine charts.
pub fn chart_transport_check(
    metric: Arc<dyn Metric>,
    chart: Arc<dyn ChartMap>,
    obj: Arc<dyn Objective>,
    w0: &Point,
    method: Method,
    eta: f64,
    iterations: usize,
    tol: f64,
) -> Result<TransportReport, AnalysisError> {
    if method == Method::MdClassic {
        return Err(AnalysisError::InvalidInput(
            "chart transport compares metric-level methods; classic MD needs a potential in both charts".into(),
        ));
    }
    let original = run_method(
        &RunConfig::new(method, eta, iterations, w0.clone()).with_tol(tol),
        &Geometry::from_metric(metric.clone()),
        obj.as_ref(),
    )?;
    require_success(&original)?;

    let pulled = pullback_metric(metric, chart.clone())?;
    let transformed_obj = TransformedObjective::new(obj, chart.clone());
    let w0_tilde = Point::with_chart(chart.forward(w0.coords()), chart.name());
    let transformed = run_method(
        &RunConfig::new(method, eta, iterations, w0_tilde).with_tol(tol),
        &Geometry::from_metric(pulled),
        &transformed_obj,
    )?;
    require_success(&transformed)?;

    let deviations: Vec<f64> = (0..original.len())
        .map(|k| {
            let mapped = chart.forward(original.points[k].coords());
            (mapped - transformed.points[k].coords()).abs().max()
        })
        .collect();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    Ok(TransportReport { deviations, max_deviation })
}

// ---------------------------------------------------------------------------
// Discretization-error sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub method: String,
    pub endpoint_error: f64,
}

/// For each stepsize, run NGD and mirrorless MD for `K = T / eta` steps and
/// measure the endpoint distance to the reference flow at time `T`.
pub fn discretization_error_sweep(
    geometry: &Geometry,
    obj: &dyn Objective,
    w0: &Point,
    horizon: f64,
    etas: &[f64],
    ode_tol: f64,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if etas.is_empty() {
        return Err(AnalysisError::InvalidInput("empty stepsize list".into()));
    }
    let mut steps = Vec::with_capacity(etas.len());
    for &eta in etas {
        if eta <= 0.0 {
            return Err(AnalysisError::InvalidInput("stepsizes must be positive".into()));
        }
        let k = horizon / eta;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
            return Err(AnalysisError::InvalidInput(format!(
                "horizon {horizon} is not an integer multiple of eta {eta}"
            )));
        }
        steps.push(k.round() as usize);
    }
    let reference = integrate_flow_sampled(
        geometry.metric().as_ref(),
        obj,
        w0,
        horizon,
        1,
        ode_tol.min(1e-12),
    )?;
    let target = reference.last_point().unwrap().coords().clone();

    let jobs: Vec<(f64, usize, Method)> = etas
        .iter()
        .zip(&steps)
        .flat_map(|(&eta, &k)| [(eta, k, Method::Ngd), (eta, k, Method::MdMirrorless)])
        .collect();
    let rows = batch::map(&jobs, |&(eta, k, method)| -> Result<SweepRow, AnalysisError> {
        let traj = run_method(
            &RunConfig::new(method, eta, k, w0.clone()).with_tol(ode_tol),
            geometry,
            obj,
        )?;
        require_success(&traj)?;
        let err = (traj.last_point().unwrap().coords() - &target).norm();
        Ok(SweepRow { eta, method: method.as_str().into(), endpoint_error: err })
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests;
