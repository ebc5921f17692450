//! The three discretizations of the Riemannian gradient flow as iterate
//! generators: natural gradient descent (full forward Euler), classic mirror
//! descent (link update), and mirrorless mirror descent (per-step
//! frozen-gradient ODE), plus the two-scale stochastic discretization that
//! interpolates between single-sample, minibatch, and batch stochastic MD.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::{GeometryError, Metric, Point};
use crate::integrators::{
    integrate_flow_sampled, mirrorless_step, mirrorless_step_ode, IntegratorError, StepMeta,
    StepResult, Trajectory, TrajectoryFailure, DEFAULT_TOL,
};
use crate::objectives::{Objective, ObjectiveError, SampleStream, Stochastic};
use crate::potentials::{potential_to_metric, Potential, PotentialError};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Method names as they appear in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ngd,
    MdClassic,
    MdMirrorless,
    FlowReference,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ngd => "ngd",
            Method::MdClassic => "md_classic",
            Method::MdMirrorless => "md_mirrorless",
            Method::FlowReference => "flow_reference",
        }
    }
}

pub const METHOD_NAMES: &[&str] = &["ngd", "md_classic", "md_mirrorless", "flow_reference"];

/// Whether mirrorless steps may use the closed-form dual solution when the
/// metric provides one. `ForceOde` re-solves the ODE to exercise the
/// equivalence numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MirrorlessMode {
    #[default]
    Auto,
    ForceOde,
}

/// How sample draws are produced in two-scale runs. `PoolAverage` replaces
/// every draw by the exact pool mean, which realizes the nu -> 0 limit for
/// finite sums.
#[derive(Debug, Clone)]
pub enum SampleMode {
    Stream(SampleStream),
    PoolAverage,
}

/// Two-scale stochastic block: gradient arguments freeze at scale `eta`
/// while samples refresh at scale `nu`.
#[derive(Debug, Clone)]
pub struct TwoScaleConfig {
    pub nu: f64,
    pub samples: SampleMode,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub stepsize: f64,
    pub iterations: usize,
    pub w_init: Point,
    pub tol: f64,
    pub mirrorless_mode: MirrorlessMode,
    pub stochastic: Option<TwoScaleConfig>,
}

impl RunConfig {
    pub fn new(method: Method, stepsize: f64, iterations: usize, w_init: Point) -> Self {
        RunConfig {
            method,
            stepsize,
            iterations,
            w_init,
            tol: DEFAULT_TOL,
            mirrorless_mode: MirrorlessMode::Auto,
            stochastic: None,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_mode(mut self, mode: MirrorlessMode) -> Self {
        self.mirrorless_mode = mode;
        self
    }

    fn validate(&self, geometry: &Geometry) -> Result<(), OptimizerError> {
        if self.stepsize <= 0.0 {
            return Err(OptimizerError::InvalidConfig("stepsize must be positive".into()));
        }
        if self.tol <= 0.0 {
            return Err(OptimizerError::InvalidConfig("tol must be positive".into()));
        }
        if !self.w_init.is_finite() {
            return Err(OptimizerError::InvalidConfig("w_init has non-finite entries".into()));
        }
        if self.w_init.dim() != geometry.dim() {
            return Err(OptimizerError::InvalidConfig(format!(
                "w_init has dimension {}, geometry expects {}",
                self.w_init.dim(),
                geometry.dim()
            )));
        }
        if self.method == Method::MdClassic && geometry.potential().is_none() {
            return Err(OptimizerError::InvalidConfig(
                "classic MD requires a potential (link function); this geometry has none".into(),
            ));
        }
        if let Some(ts) = &self.stochastic {
            if ts.nu <= 0.0 {
                return Err(OptimizerError::InvalidConfig("nu must be positive".into()));
            }
            scale_ratio(self.stepsize, ts.nu).ok_or_else(|| {
                OptimizerError::InvalidConfig(format!(
                    "eta/nu or nu/eta must be a positive integer (eta = {}, nu = {})",
                    self.stepsize, ts.nu
                ))
            })?;
        }
        Ok(())
    }
}

/// eta = b nu (returns `Minibatch(b)`) or nu = c eta (returns `SampleReuse(c)`),
/// within a relative rounding tolerance.
pub fn scale_ratio(eta: f64, nu: f64) -> Option<ScaleRatio> {
    let check = |num: f64, den: f64| -> Option<u64> {
        let r = num / den;
        let rounded = r.round();
        (rounded >= 1.0 && (r - rounded).abs() <= 1e-9 * r.max(1.0)).then_some(rounded as u64)
    };
    if eta >= nu {
        check(eta, nu).map(ScaleRatio::Minibatch)
    } else {
        check(nu, eta).map(ScaleRatio::SampleReuse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRatio {
    /// eta = b nu: each iterate aggregates `b` sample updates.
    Minibatch(u64),
    /// nu = c eta: each sample is reused for `c` consecutive iterates.
    SampleReuse(u64),
}

/// The geometry a run operates on: either a bare metric tensor or a
/// potential (whose Hessian is the metric and whose link enables classic MD).
#[derive(Clone)]
pub enum Geometry {
    Metric(Arc<dyn Metric>),
    Potential { psi: Arc<dyn Potential>, metric: Arc<dyn Metric> },
}

impl Geometry {
    pub fn from_metric(metric: Arc<dyn Metric>) -> Self {
        Geometry::Metric(metric)
    }

    pub fn from_potential(psi: Arc<dyn Potential>) -> Self {
        let metric = potential_to_metric(psi.clone());
        Geometry::Potential { psi, metric }
    }

    pub fn metric(&self) -> &Arc<dyn Metric> {
        match self {
            Geometry::Metric(m) => m,
            Geometry::Potential { metric, .. } => metric,
        }
    }

    pub fn potential(&self) -> Option<&Arc<dyn Potential>> {
        match self {
            Geometry::Metric(_) => None,
            Geometry::Potential { psi, .. } => Some(psi),
        }
    }

    pub fn dim(&self) -> usize {
        self.metric().dim()
    }

    pub fn name(&self) -> String {
        match self {
            Geometry::Metric(m) => m.name(),
            Geometry::Potential { psi, .. } => psi.name(),
        }
    }
}

/// One natural-gradient step `w - eta H(w)^{-1} grad F(w)`.
pub fn ngd_step(
    metric: &dyn Metric,
    obj: &dyn Objective,
    w: &Point,
    eta: f64,
) -> Result<Point, OptimizerError> {
    let g = obj.gradient(w.coords());
    let dir = metric.solve(w.coords(), &g)?;
    let next = w.coords() - dir * eta;
    if !metric.in_domain(&next) {
        return Err(OptimizerError::Geometry(GeometryError::OutOfDomain(
            "NGD step left the metric domain".into(),
        )));
    }
    Ok(Point::with_chart(next, w.chart()))
}

/// One classic mirror-descent step `inverse_link(link(w) - eta grad F(w))`.
pub fn md_step_classic(
    psi: &dyn Potential,
    obj: &dyn Objective,
    w: &Point,
    eta: f64,
) -> Result<Point, OptimizerError> {
    let z = psi.link(w.coords())? - obj.gradient(w.coords()) * eta;
    let next = psi.inverse_link(&z)?;
    Ok(Point::with_chart(next, w.chart()))
}

fn meta_at(obj: &dyn Objective, w: &Point, substeps: u32, refine_error: f64) -> StepMeta {
    StepMeta {
        objective: obj.value(w.coords()),
        grad_norm: obj.gradient(w.coords()).norm(),
        substeps,
        refine_error,
    }
}

/// Run a method for `K` iterations, producing `K + 1` iterates. Mirrorless
/// steps access the objective through a single gradient evaluation per
/// iteration. Step failures truncate the trajectory and are recorded rather
/// than discarded.
pub fn run_method(
    cfg: &RunConfig,
    geometry: &Geometry,
    obj: &dyn Objective,
) -> Result<Trajectory, OptimizerError> {
    cfg.validate(geometry)?;
    if obj.dim() != geometry.dim() {
        return Err(OptimizerError::InvalidConfig(format!(
            "objective dimension {} does not match geometry dimension {}",
            obj.dim(),
            geometry.dim()
        )));
    }
    let metric = geometry.metric();
    metric.check_point(cfg.w_init.coords())?;

    if cfg.method == Method::FlowReference {
        let traj = integrate_flow_sampled(
            metric.as_ref(),
            obj,
            &cfg.w_init,
            cfg.stepsize,
            cfg.iterations,
            cfg.tol,
        )?;
        return Ok(traj);
    }

    let mut traj = Trajectory::new();
    let mut w = cfg.w_init.clone();
    traj.push(0.0, w.clone(), meta_at(obj, &w, 0, 0.0));
    for k in 0..cfg.iterations {
        let stepped: Result<(Point, u32, f64), OptimizerError> = match cfg.method {
            Method::Ngd => ngd_step(metric.as_ref(), obj, &w, cfg.stepsize).map(|p| (p, 1, 0.0)),
            Method::MdClassic => {
                let psi = geometry.potential().expect("validated above");
                md_step_classic(psi.as_ref(), obj, &w, cfg.stepsize).map(|p| (p, 1, 0.0))
            }
            Method::MdMirrorless => {
                let g = obj.gradient(w.coords());
                let res: Result<StepResult, IntegratorError> = match cfg.mirrorless_mode {
                    MirrorlessMode::Auto => {
                        mirrorless_step(metric.as_ref(), &w, &g, cfg.stepsize, cfg.tol)
                    }
                    MirrorlessMode::ForceOde => {
                        mirrorless_step_ode(metric.as_ref(), &w, &g, cfg.stepsize, cfg.tol)
                    }
                };
                res.map(|r| (r.point, r.substeps, r.refine_error)).map_err(Into::into)
            }
            Method::FlowReference => unreachable!(),
        };
        match stepped {
            Ok((next, substeps, refine_error)) => {
                let t = cfg.stepsize * (k + 1) as f64;
                traj.push(t, next.clone(), meta_at(obj, &next, substeps, refine_error));
                w = next;
            }
            Err(e) => {
                traj.failure = Some(TrajectoryFailure {
                    iteration: k,
                    time: cfg.stepsize * k as f64,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(traj)
}

fn draw_gradient(
    sobj: &dyn Stochastic,
    mode: &SampleMode,
    w: &DVector<f64>,
    counter: u64,
) -> Result<DVector<f64>, OptimizerError> {
    match mode {
        SampleMode::Stream(stream) => {
            let idx = stream.index_at(counter, sobj.pool_size())?;
            Ok(sobj.sample_gradient(w, idx))
        }
        SampleMode::PoolAverage => Ok(sobj.gradient(w)),
    }
}

/// Two-scale stochastic discretization for Hessian-map geometries, solved
/// exactly in the dual: within each interval `[k eta, (k+1) eta)` the
/// gradient argument stays frozen at `w(k eta)` while the sample refreshes
/// every `nu`, and the dual variable moves linearly between breakpoints.
/// With `eta = b nu` the iterate at `(k+1) eta` is exactly the classic
/// minibatch update with the averaged gradient.
pub fn run_two_scale_stochastic(
    cfg: &RunConfig,
    psi: &Arc<dyn Potential>,
    sobj: &dyn Stochastic,
) -> Result<Trajectory, OptimizerError> {
    let geometry = Geometry::from_potential(psi.clone());
    cfg.validate(&geometry)?;
    let ts = cfg
        .stochastic
        .as_ref()
        .ok_or_else(|| OptimizerError::InvalidConfig("two-scale run needs a stochastic block".into()))?;
    if sobj.dim() != psi.dim() {
        return Err(OptimizerError::InvalidConfig(format!(
            "objective dimension {} does not match potential dimension {}",
            sobj.dim(),
            psi.dim()
        )));
    }
    let ratio = scale_ratio(cfg.stepsize, ts.nu).expect("validated above");
    let eta = cfg.stepsize;

    let mut traj = Trajectory::new();
    let mut w = cfg.w_init.clone();
    psi.check_point(w.coords())?;
    traj.push(0.0, w.clone(), meta_at(sobj, &w, 0, 0.0));

    let mut dual = psi.link(w.coords())?;
    let mut draw_counter: u64 = 0;
    match ratio {
        ScaleRatio::Minibatch(b) => {
            for k in 0..cfg.iterations {
                let frozen = w.coords().clone();
                let mut failed = None;
                for _ in 0..b {
                    match draw_gradient(sobj, &ts.samples, &frozen, draw_counter) {
                        Ok(g) => dual -= g * ts.nu,
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                    draw_counter += 1;
                }
                let next = match failed {
                    None => psi.inverse_link(&dual).map_err(OptimizerError::from),
                    Some(e) => Err(e),
                };
                match next {
                    Ok(coords) => {
                        let p = Point::with_chart(coords, w.chart());
                        traj.push(eta * (k + 1) as f64, p.clone(), meta_at(sobj, &p, b as u32, 0.0));
                        w = p;
                    }
                    Err(e) => {
                        traj.failure = Some(TrajectoryFailure {
                            iteration: k,
                            time: eta * k as f64,
                            message: e.to_string(),
                        });
                        break;
                    }
                }
            }
        }
        ScaleRatio::SampleReuse(c) => {
            // The sample is held for c consecutive eta-intervals; the
            // gradient argument still refreshes at every eta breakpoint.
            for k in 0..cfg.iterations {
                if k as u64 % c == 0 && k > 0 {
                    draw_counter += 1;
                }
                let step = draw_gradient(sobj, &ts.samples, w.coords(), draw_counter)
                    .map(|g| g * eta)
                    .and_then(|dg| {
                        dual -= dg;
                        psi.inverse_link(&dual).map_err(OptimizerError::from)
                    });
                match step {
                    Ok(coords) => {
                        let p = Point::with_chart(coords, w.chart());
                        traj.push(eta * (k + 1) as f64, p.clone(), meta_at(sobj, &p, 1, 0.0));
                        w = p;
                    }
                    Err(e) => {
                        traj.failure = Some(TrajectoryFailure {
                            iteration: k,
                            time: eta * k as f64,
                            message: e.to_string(),
                        });
                        break;
                    }
                }
            }
        }
    }
    Ok(traj)
}

/// Classic (mini)batch stochastic mirror descent: at each iteration average
/// `batch` sample gradients at the current iterate and apply one link
/// update. The reference implementation the two-scale identity is checked
/// against; it recomputes the link at every step.
pub fn run_stochastic_md(
    psi: &Arc<dyn Potential>,
    sobj: &dyn Stochastic,
    w0: &Point,
    eta: f64,
    iterations: usize,
    batch: usize,
    samples: &SampleMode,
) -> Result<Trajectory, OptimizerError> {
    if batch == 0 {
        return Err(OptimizerError::InvalidConfig("batch must be positive".into()));
    }
    let mut traj = Trajectory::new();
    let mut w = w0.clone();
    psi.check_point(w.coords())?;
    traj.push(0.0, w.clone(), meta_at(sobj, &w, 0, 0.0));
    let mut draw_counter: u64 = 0;
    for k in 0..iterations {
        let mut mean = DVector::zeros(sobj.dim());
        let mut failed = None;
        for _ in 0..batch {
            match draw_gradient(sobj, samples, w.coords(), draw_counter) {
                Ok(g) => mean += g,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
            draw_counter += 1;
        }
        mean /= batch as f64;
        let next = match failed {
            None => (|| {
                let z = psi.link(w.coords())? - mean * eta;
                psi.inverse_link(&z)
            })()
            .map_err(OptimizerError::from),
            Some(e) => Err(e),
        };
        match next {
            Ok(coords) => {
                let p = Point::with_chart(coords, w.chart());
                traj.push(eta * (k + 1) as f64, p.clone(), meta_at(sobj, &p, batch as u32, 0.0));
                w = p;
            }
            Err(e) => {
                traj.failure = Some(TrajectoryFailure {
                    iteration: k,
                    time: eta * k as f64,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(traj)
}
