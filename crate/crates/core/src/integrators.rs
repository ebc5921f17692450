//! Continuous-time machinery: the reference Riemannian gradient flow
//! `dw/dt = -H(w)^{-1} grad F(w)` and the single frozen-gradient step
//! `dw/dt = -H(w)^{-1} g` that defines mirror descent for arbitrary metrics.
//!
//! Integration is classical RK4 on a fixed grid with global step-doubling:
//! the substep count doubles until the endpoint moves by at most `tol` in
//! sup norm. Fixed grids keep refinement estimates and determinism trivial;
//! desk-scale problems need no stiffness handling. Domain exits abort the
//! integration rather than clamping, since silent projection would corrupt
//! discretization-order experiments.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{GeometryError, Metric, Point};
use crate::objectives::Objective;

/// Default endpoint tolerance for step-doubling refinement.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_DOUBLINGS: usize = 20;

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("flow left the metric domain at t = {time:.6e}")]
    DomainExit { time: f64 },
    #[error("step-doubling did not converge after {doublings} doublings (last endpoint move {last_delta:.3e})")]
    NoConvergence { doublings: usize, last_delta: f64 },
    #[error("non-finite state at t = {time:.6e}")]
    NonFinite { time: f64 },
    #[error("invalid integration parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-iterate record attached to a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct StepMeta {
    pub objective: f64,
    pub grad_norm: f64,
    /// ODE substeps used to produce this iterate; 0 for closed-form or
    /// single-evaluation steps arriving here, and for the initial point.
    pub substeps: u32,
    /// Endpoint move at the final step-doubling, 0 when exact.
    pub refine_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryFailure {
    pub iteration: usize,
    pub time: f64,
    pub message: String,
}

/// Time-stamped iterates with per-step metadata. When a step fails the
/// trajectory up to the failure is kept and the failure recorded.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub meta: Vec<StepMeta>,
    pub failure: Option<TrajectoryFailure>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { times: Vec::new(), points: Vec::new(), meta: Vec::new(), failure: None }
    }

    pub fn push(&mut self, time: f64, point: Point, meta: StepMeta) {
        self.times.push(time);
        self.points.push(point);
        self.meta.push(meta);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_point(&self) -> Option<&Point> {
        self.points.last()
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

/// One RK4 pass over `[0, horizon]` with `n` substeps; returns all grid
/// states including the initial one.
fn rk4_grid<F>(field: &F, w0: &DVector<f64>, horizon: f64, n: usize) -> Result<Vec<DVector<f64>>, IntegratorError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    let h = horizon / n as f64;
    let mut states = Vec::with_capacity(n + 1);
    let mut w = w0.clone();
    states.push(w.clone());
    for step in 0..n {
        let t = step as f64 * h;
        let eval = |x: &DVector<f64>| field(x).map_err(|_| IntegratorError::DomainExit { time: t });
        let k1 = eval(&w)?;
        let k2 = eval(&(&w + &k1 * (h / 2.0)))?;
        let k3 = eval(&(&w + &k2 * (h / 2.0)))?;
        let k4 = eval(&(&w + &k3 * h))?;
        w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !w.iter().all(|x| x.is_finite()) {
            return Err(IntegratorError::NonFinite { time: t + h });
        }
        states.push(w.clone());
    }
    Ok(states)
}

struct Refined {
    states: Vec<DVector<f64>>,
    substeps: u32,
    endpoint_delta: f64,
}

/// Step-doubling refinement: double the grid until the endpoint moves by at
/// most `tol` (sup norm). A coarse-grid domain exit or overflow is retried on
/// the finer grid; only a persistent failure is reported.
fn refine_grid<F>(
    field: &F,
    w0: &DVector<f64>,
    horizon: f64,
    n0: usize,
    tol: f64,
) -> Result<Refined, IntegratorError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    let mut n = n0.max(1);
    let mut prev: Option<Vec<DVector<f64>>> = None;
    let mut last_err: Option<IntegratorError> = None;
    let mut last_delta = f64::INFINITY;
    for _ in 0..=MAX_DOUBLINGS {
        match rk4_grid(field, w0, horizon, n) {
            Ok(states) => {
                if let Some(prev_states) = &prev {
                    let delta = (states.last().unwrap() - prev_states.last().unwrap()).abs().max();
                    if delta <= tol {
                        return Ok(Refined { states, substeps: n as u32, endpoint_delta: delta });
                    }
                    last_delta = delta;
                }
                prev = Some(states);
                last_err = None;
            }
            Err(e) => {
                prev = None;
                last_err = Some(e);
            }
        }
        n *= 2;
    }
    match last_err {
        Some(e) => Err(e),
        None => Err(IntegratorError::NoConvergence { doublings: MAX_DOUBLINGS, last_delta }),
    }
}

fn flow_field<'a>(
    metric: &'a dyn Metric,
    obj: &'a dyn Objective,
) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>, GeometryError> + 'a {
    move |w| {
        let g = obj.gradient(w);
        Ok(-metric.solve(w, &g)?)
    }
}

fn check_start(metric: &dyn Metric, w0: &Point, tol: f64) -> Result<(), IntegratorError> {
    if !w0.is_finite() {
        return Err(IntegratorError::InvalidParams("initial point has non-finite coordinates".into()));
    }
    if tol <= 0.0 {
        return Err(IntegratorError::InvalidParams("tolerance must be positive".into()));
    }
    metric.check_point(w0.coords())?;
    Ok(())
}

/// Integrate the Riemannian gradient flow over `[0, horizon]`; the returned
/// trajectory is the finest refinement grid.
pub fn integrate_flow(
    metric: &dyn Metric,
    obj: &dyn Objective,
    w0: &Point,
    horizon: f64,
    tol: f64,
) -> Result<Trajectory, IntegratorError> {
    check_start(metric, w0, tol)?;
    if horizon <= 0.0 {
        return Err(IntegratorError::InvalidParams("horizon must be positive".into()));
    }
    let field = flow_field(metric, obj);
    let refined = refine_grid(&field, w0.coords(), horizon, 8, tol)?;
    let n = refined.states.len() - 1;
    let h = horizon / n as f64;
    let mut traj = Trajectory::new();
    for (i, state) in refined.states.into_iter().enumerate() {
        let meta = StepMeta {
            objective: obj.value(&state),
            grad_norm: obj.gradient(&state).norm(),
            substeps: if i == 0 { 0 } else { refined.substeps },
            refine_error: refined.endpoint_delta,
        };
        traj.push(i as f64 * h, Point::with_chart(state, w0.chart()), meta);
    }
    Ok(traj)
}

/// Integrate the flow and sample it at `t = eta k` for `k = 0..=steps`. The
/// refinement grid is kept a multiple of `steps` so samples are exact grid
/// points.
pub fn integrate_flow_sampled(
    metric: &dyn Metric,
    obj: &dyn Objective,
    w0: &Point,
    eta: f64,
    steps: usize,
    tol: f64,
) -> Result<Trajectory, IntegratorError> {
    check_start(metric, w0, tol)?;
    if eta <= 0.0 || steps == 0 {
        return Err(IntegratorError::InvalidParams("eta and steps must be positive".into()));
    }
    let horizon = eta * steps as f64;
    let n0 = steps * (8usize.div_ceil(steps)).max(1);
    let field = flow_field(metric, obj);
    let refined = refine_grid(&field, w0.coords(), horizon, n0, tol)?;
    let n = refined.states.len() - 1;
    let stride = n / steps;
    let mut traj = Trajectory::new();
    for k in 0..=steps {
        let state = refined.states[k * stride].clone();
        let meta = StepMeta {
            objective: obj.value(&state),
            grad_norm: obj.gradient(&state).norm(),
            substeps: if k == 0 { 0 } else { stride as u32 },
            refine_error: refined.endpoint_delta,
        };
        traj.push(k as f64 * eta, Point::with_chart(state, w0.chart()), meta);
    }
    Ok(traj)
}

/// Stop rule for open-ended flow runs.
#[derive(Debug, Clone, Copy)]
pub enum StopRule {
    ObjectiveBelow(f64),
    GradNormBelow(f64),
}

impl StopRule {
    fn satisfied(&self, obj: &dyn Objective, w: &DVector<f64>) -> bool {
        match self {
            StopRule::ObjectiveBelow(f) => obj.value(w) <= *f,
            StopRule::GradNormBelow(g) => obj.gradient(w).norm() <= *g,
        }
    }
}

/// Integrate the flow in chunks of length `chunk` until the stop rule holds
/// at a chunk boundary or `max_time` is exceeded. The trajectory records
/// chunk boundaries only.
pub fn integrate_flow_until(
    metric: &dyn Metric,
    obj: &dyn Objective,
    w0: &Point,
    stop: StopRule,
    chunk: f64,
    max_time: f64,
    tol: f64,
) -> Result<Trajectory, IntegratorError> {
    check_start(metric, w0, tol)?;
    if chunk <= 0.0 || max_time <= 0.0 {
        return Err(IntegratorError::InvalidParams("chunk and max_time must be positive".into()));
    }
    let field = flow_field(metric, obj);
    let mut traj = Trajectory::new();
    let mut w = w0.coords().clone();
    let mut t = 0.0;
    let push = |traj: &mut Trajectory, t: f64, w: &DVector<f64>, substeps: u32, delta: f64| {
        let meta = StepMeta {
            objective: obj.value(w),
            grad_norm: obj.gradient(w).norm(),
            substeps,
            refine_error: delta,
        };
        traj.push(t, Point::with_chart(w.clone(), w0.chart()), meta);
    };
    push(&mut traj, 0.0, &w, 0, 0.0);
    if stop.satisfied(obj, &w) {
        return Ok(traj);
    }
    while t < max_time {
        let refined = refine_grid(&field, &w, chunk, 64, tol)?;
        w = refined.states.last().unwrap().clone();
        t += chunk;
        push(&mut traj, t, &w, refined.substeps, refined.endpoint_delta);
        if stop.satisfied(obj, &w) {
            return Ok(traj);
        }
    }
    Err(IntegratorError::NoConvergence { doublings: MAX_DOUBLINGS, last_delta: f64::NAN })
}

/// Result of a single mirror-descent step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub point: Point,
    pub substeps: u32,
    pub refine_error: f64,
}

/// One mirror-descent step: solve `dw/dt = -H(w)^{-1} g` over `[0, eta]`
/// with the gradient frozen at `g`. Metrics with a closed-form flow (Hessian
/// maps) use the exact dual-linear solution; otherwise the ODE is integrated
/// with RK4 step-doubling.
pub fn mirrorless_step(
    metric: &dyn Metric,
    w: &Point,
    g: &DVector<f64>,
    eta: f64,
    tol: f64,
) -> Result<StepResult, IntegratorError> {
    check_start(metric, w, tol)?;
    if let Some(exact) = metric.frozen_flow(w.coords(), g, eta) {
        let coords = exact?;
        return Ok(StepResult {
            point: Point::with_chart(coords, w.chart()),
            substeps: 0,
            refine_error: 0.0,
        });
    }
    mirrorless_step_ode(metric, w, g, eta, tol)
}

/// The ODE path of [`mirrorless_step`], used unconditionally in verification
/// mode to exercise the equivalence with the closed form.
pub fn mirrorless_step_ode(
    metric: &dyn Metric,
    w: &Point,
    g: &DVector<f64>,
    eta: f64,
    tol: f64,
) -> Result<StepResult, IntegratorError> {
    check_start(metric, w, tol)?;
    if eta <= 0.0 {
        return Err(IntegratorError::InvalidParams("stepsize must be positive".into()));
    }
    let field = |x: &DVector<f64>| Ok(-metric.solve(x, g)?);
    let refined = refine_grid(&field, w.coords(), eta, 4, tol)?;
    Ok(StepResult {
        point: Point::with_chart(refined.states.last().unwrap().clone(), w.chart()),
        substeps: refined.substeps,
        refine_error: refined.endpoint_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        make_builtin_metric, EuclideanMetric, FixedSpdMetric, MetricSpec, RankOneBumpMetric,
    };
    use crate::objectives::Quadratic;
    use crate::potentials::{make_builtin_potential, potential_to_metric, PotentialSpec};
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Linear {
        c: DVector<f64>,
    }

    impl Objective for Linear {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn name(&self) -> String {
            "linear".into()
        }
        fn value(&self, w: &DVector<f64>) -> f64 {
            self.c.dot(w)
        }
        fn gradient(&self, _w: &DVector<f64>) -> DVector<f64> {
            self.c.clone()
        }
    }

    fn identity_quadratic(d: usize) -> Quadratic {
        Quadratic::new(DMatrix::identity(d, d), DVector::zeros(d)).unwrap()
    }

    #[test]
    fn euclidean_flow_reaches_exponential_decay() {
        let metric = EuclideanMetric::new(2);
        let obj = identity_quadratic(2);
        let w0 = Point::from_slice(&[1.0, 0.0]);
        let traj = integrate_flow(&metric, &obj, &w0, 1.0, 1e-10).unwrap();
        let end = traj.last_point().unwrap().coords();
        assert!((end[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!(end[1].abs() < 1e-12);
    }

    #[test]
    fn fixed_spd_flow_decays_componentwise() {
        let metric =
            FixedSpdMetric::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0])))
                .unwrap();
        let obj = identity_quadratic(2);
        let w0 = Point::from_slice(&[1.0, 1.0]);
        let traj = integrate_flow(&metric, &obj, &w0, 1.0, 1e-10).unwrap();
        let end = traj.last_point().unwrap().coords();
        assert!((end[0] - (-0.5f64).exp()).abs() < 1e-9);
        assert!((end[1] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn entropy_flow_is_linear_in_the_dual() {
        // For H = hess(neg_entropy) and linear objective, log w(T) = log w0 - T c.
        let psi = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let metric = potential_to_metric(psi);
        let c = DVector::from_column_slice(&[0.7, -0.3]);
        let obj = Linear { c: c.clone() };
        let w0 = Point::from_slice(&[0.8, 1.4]);
        let horizon = 1.5;
        let traj = integrate_flow(metric.as_ref(), &obj, &w0, horizon, 1e-11).unwrap();
        let end = traj.last_point().unwrap().coords();
        for i in 0..2 {
            let expected = w0.coords()[i].ln() - horizon * c[i];
            assert!((end[i].ln() - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn trajectory_times_strictly_increase_from_zero() {
        let metric = EuclideanMetric::new(2);
        let obj = identity_quadratic(2);
        let traj =
            integrate_flow(&metric, &obj, &Point::from_slice(&[1.0, 2.0]), 0.5, 1e-9).unwrap();
        assert_eq!(traj.times[0], 0.0);
        assert!(traj.times.windows(2).all(|t| t[1] > t[0]));
        assert_eq!(traj.times.len(), traj.points.len());
        assert_eq!(traj.times.len(), traj.meta.len());
    }

    #[test]
    fn mirrorless_step_euclidean_is_exact() {
        let metric = EuclideanMetric::new(2);
        let w = Point::from_slice(&[0.3, -0.8]);
        let g = DVector::from_column_slice(&[1.5, 0.25]);
        let res = mirrorless_step(&metric, &w, &g, 0.7, 1e-10).unwrap();
        let expected = w.coords() - &g * 0.7;
        assert_eq!(res.point.coords(), &expected);
        assert_eq!(res.substeps, 0);

        // The ODE path agrees: the field is constant, so RK4 is exact too.
        let res = mirrorless_step_ode(&metric, &w, &g, 0.7, 1e-10).unwrap();
        assert!((res.point.coords() - expected).abs().max() < 1e-14);
    }

    #[test]
    fn mirrorless_step_entropy_closed_form() {
        let psi = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let metric = potential_to_metric(psi);
        let w = Point::from_slice(&[1.0, 1.0]);
        let g = DVector::from_column_slice(&[2.0f64.ln(), 0.0]);
        let res = mirrorless_step(metric.as_ref(), &w, &g, 1.0, 1e-10).unwrap();
        assert!((res.point.coords()[0] - 0.5).abs() < 1e-14);
        assert!((res.point.coords()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mirrorless_step_matches_first_order_expansion() {
        // H(0) = I so the step is w - eta g + O(eta^3) at w = 0.
        let metric = RankOneBumpMetric::new(2);
        let w = Point::from_slice(&[0.0, 0.0]);
        let g = DVector::from_column_slice(&[1.0, 0.0]);
        let eta = 1e-3;
        let res = mirrorless_step(&metric, &w, &g, eta, 1e-12).unwrap();
        let dev = (res.point.coords() - DVector::from_column_slice(&[-eta, 0.0])).abs().max();
        assert!(dev <= 1e-6, "deviation {dev}");
        assert!(res.substeps > 0);
    }

    #[test]
    fn ode_matches_closed_form_for_hessian_metrics() {
        let tol = 1e-10;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for spec in [
            PotentialSpec::NegEntropy { dim: 3 },
            PotentialSpec::Arcsinh { alpha: 1.0, dim: 3 },
        ] {
            let psi = make_builtin_potential(&spec).unwrap();
            let metric = potential_to_metric(psi.clone());
            for _ in 0..10 {
                let w = Point::new(psi.sample_domain_point(&mut rng));
                let g = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                let eta = rng.random_range(0.05..0.3);
                let exact = metric.frozen_flow(w.coords(), &g, eta).unwrap().unwrap();
                let ode = mirrorless_step_ode(metric.as_ref(), &w, &g, eta, tol).unwrap();
                let dev = (ode.point.coords() - exact).abs().max();
                assert!(dev <= 10.0 * tol, "{}: deviation {dev}", psi.name());
            }
        }
    }

    #[test]
    fn rk4_order_check() {
        // Endpoint error vs analytic solution shrinks by >= 8x per doubling.
        let metric = RankOneBumpMetric::new(2);
        let obj = identity_quadratic(2);
        let field = |w: &DVector<f64>| {
            let g = obj.gradient(w);
            Ok(-metric.solve(w, &g).unwrap())
        };
        let w0 = DVector::from_column_slice(&[0.9, -0.4]);
        let reference = {
            let grid = rk4_grid(&field, &w0, 1.0, 4096).unwrap();
            grid.last().unwrap().clone()
        };
        let errs: Vec<f64> = [8usize, 16, 32]
            .iter()
            .map(|&n| {
                let grid = rk4_grid(&field, &w0, 1.0, n).unwrap();
                (grid.last().unwrap() - &reference).abs().max()
            })
            .collect();
        assert!(errs[0] / errs[1] >= 8.0, "ratio {}", errs[0] / errs[1]);
        assert!(errs[1] / errs[2] >= 8.0, "ratio {}", errs[1] / errs[2]);
    }

    #[test]
    fn flow_is_invariant_to_time_rescaling() {
        // Integrating c*F over T equals integrating F over c*T.
        struct Scaled<'a> {
            inner: &'a dyn Objective,
            c: f64,
        }
        impl Objective for Scaled<'_> {
            fn dim(&self) -> usize {
                self.inner.dim()
            }
            fn name(&self) -> String {
                "scaled".into()
            }
            fn value(&self, w: &DVector<f64>) -> f64 {
                self.c * self.inner.value(w)
            }
            fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
                self.inner.gradient(w) * self.c
            }
        }
        let metric = RankOneBumpMetric::new(2);
        let obj = identity_quadratic(2);
        let scaled = Scaled { inner: &obj, c: 2.5 };
        let w0 = Point::from_slice(&[1.1, -0.6]);
        let tol = 1e-11;
        let a = integrate_flow(&metric, &scaled, &w0, 1.0, tol).unwrap();
        let b = integrate_flow(&metric, &obj, &w0, 2.5, tol).unwrap();
        let dev = (a.last_point().unwrap().coords() - b.last_point().unwrap().coords()).abs().max();
        assert!(dev <= 20.0 * tol, "deviation {dev}");
    }

    #[test]
    fn domain_exit_is_reported_with_time() {
        // A metric restricted to the open unit ball; a linear flow exits it
        // in finite time.
        struct BallMetric;
        impl Metric for BallMetric {
            fn dim(&self) -> usize {
                1
            }
            fn name(&self) -> String {
                "unit_ball".into()
            }
            fn in_domain(&self, w: &DVector<f64>) -> bool {
                w[0].is_finite() && w[0].abs() < 1.0
            }
            fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
                self.check_point(w)?;
                Ok(DMatrix::identity(1, 1))
            }
        }
        let obj = Linear { c: DVector::from_column_slice(&[-1.0]) };
        let res = integrate_flow(&BallMetric, &obj, &Point::from_slice(&[0.0]), 2.0, 1e-9);
        match res {
            Err(IntegratorError::DomainExit { time }) => {
                assert!(time > 0.5 && time < 2.0, "exit time {time}");
            }
            other => panic!("expected domain exit, got {other:?}"),
        }
    }

    #[test]
    fn zero_tolerance_reports_no_convergence() {
        let metric = RankOneBumpMetric::new(2);
        let obj = identity_quadratic(2);
        let w0 = Point::from_slice(&[1.0, 1.0]);
        let res = mirrorless_step_ode(&metric, &w0, &obj.gradient(w0.coords()), 0.5, 1e-300);
        assert!(matches!(res, Err(IntegratorError::NoConvergence { .. })));
    }

    #[test]
    fn sampled_flow_hits_grid_times() {
        let metric = EuclideanMetric::new(2);
        let obj = identity_quadratic(2);
        let w0 = Point::from_slice(&[1.0, 0.5]);
        let traj = integrate_flow_sampled(&metric, &obj, &w0, 0.25, 4, 1e-10).unwrap();
        assert_eq!(traj.len(), 5);
        for (k, t) in traj.times.iter().enumerate() {
            assert!((t - 0.25 * k as f64).abs() < 1e-15);
        }
        let end = traj.last_point().unwrap().coords();
        assert!((end[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn flow_until_stops_at_target() {
        let metric = EuclideanMetric::new(2);
        let obj = identity_quadratic(2);
        let w0 = Point::from_slice(&[1.0, 1.0]);
        let traj = integrate_flow_until(
            &metric,
            &obj,
            &w0,
            StopRule::ObjectiveBelow(1e-8),
            2.0,
            100.0,
            1e-10,
        )
        .unwrap();
        assert!(obj.value(traj.last_point().unwrap().coords()) <= 1e-8);
        assert!(traj.len() > 1);
    }

    #[test]
    fn lyapunov_flow_runs_through_generic_stepper() {
        // Frozen-gradient step on the Lyapunov-inverse metric integrates
        // dW/dt = -(G W + W G).
        let metric = make_builtin_metric(&MetricSpec::LyapunovInverse { n: 2 }).unwrap();
        let w0 = Point::new(crate::geometry::sym_vec(&DMatrix::identity(2, 2)));
        let g = crate::geometry::sym_vec(&DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]));
        let res = mirrorless_step(metric.as_ref(), &w0, &g, 0.2, 1e-10).unwrap();
        assert!(res.substeps > 0);
        // At W = I the field is -2G; check the first-order direction.
        let first_order = w0.coords() - &g * (2.0 * 0.2);
        let dev = (res.point.coords() - first_order).abs().max();
        assert!(dev < 0.05, "deviation {dev}");
    }
}
