//! Riemannian structure on `R^d`: metric-tensor families, local distances,
//! and the built-in metric examples (including non-Hessian ones).
//!
//! A metric tensor is a smoothly varying SPD operator family `H(w)`. All
//! built-ins can materialize `H(w)` as a dense matrix; most also carry a
//! closed-form `solve`. Metrics whose operator is the Hessian of a potential
//! additionally expose an exact solution of the frozen-gradient flow
//! `dw/dt = -H(w)^{-1} g` (see [`Metric::frozen_flow`]), which is what makes
//! single mirror-descent steps solvable without an ODE integrator.

mod symmetric;

pub use symmetric::{sym_dim, sym_side, sym_unvec, sym_vec, LyapunovInverseMetric};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::potentials::{make_builtin_potential, potential_to_metric, PotentialSpec};

/// Default chart label for points in the original parametrization.
pub const DEFAULT_CHART: &str = "w";

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point outside metric domain: {0}")]
    OutOfDomain(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("invalid metric parameters: {0}")]
    InvalidParams(String),
    #[error("metric solve failed: {0}")]
    SolveFailed(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

/// A parameter vector in a named chart of an `R^d` manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: DVector<f64>,
    chart: String,
}

impl Point {
    pub fn new(coords: DVector<f64>) -> Self {
        Self::with_chart(coords, DEFAULT_CHART)
    }

    pub fn with_chart(coords: DVector<f64>, chart: impl Into<String>) -> Self {
        Self { coords, chart: chart.into() }
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn chart(&self) -> &str {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coords.iter().copied().collect()
    }
}

/// Capability flags of a metric-tensor family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub materialize: bool,
    pub apply: bool,
    pub solve: bool,
    /// The frozen-gradient flow has an exact (dual-linear) solution.
    pub closed_form_flow: bool,
}

impl Capabilities {
    pub fn dense() -> Self {
        Capabilities { materialize: true, apply: true, solve: true, closed_form_flow: false }
    }

    pub fn hessian() -> Self {
        Capabilities { closed_form_flow: true, ..Capabilities::dense() }
    }
}

/// A smoothly varying SPD operator family `H(w)` on a domain in `R^d`.
pub trait Metric: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    /// Whether `H` is defined (and SPD) at `w`.
    fn in_domain(&self, w: &DVector<f64>) -> bool;

    /// Dense `H(w)`.
    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::dense()
    }

    /// `H(w) v`.
    fn apply(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(self.materialize(w)? * v)
    }

    /// `H(w)^{-1} v`, by Cholesky on the materialized matrix unless a
    /// closed-form solve exists.
    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        let h = self.materialize(w)?;
        let chol = Cholesky::new(h).ok_or_else(|| {
            GeometryError::NotSpd(format!("{} failed SPD factorization at w", self.name()))
        })?;
        Ok(chol.solve(v))
    }

    /// Exact endpoint of `dw/dt = -H(w)^{-1} g` at time `t`, when the metric
    /// admits one (Hessian metrics: linear interpolation in the dual).
    fn frozen_flow(
        &self,
        _w: &DVector<f64>,
        _g: &DVector<f64>,
        _t: f64,
    ) -> Option<Result<DVector<f64>, GeometryError>> {
        None
    }

    /// A random point in the metric's domain, for property checks.
    fn sample_domain_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
    }

    fn check_point(&self, w: &DVector<f64>) -> Result<(), GeometryError> {
        if w.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        if !self.in_domain(w) {
            return Err(GeometryError::OutOfDomain(format!(
                "{} is undefined at the given point",
                self.name()
            )));
        }
        Ok(())
    }
}

/// `H(w) = I`.
pub struct EuclideanMetric {
    dim: usize,
}

impl EuclideanMetric {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Metric for EuclideanMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        "euclidean".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite())
    }

    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(DMatrix::identity(self.dim, self.dim))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::hessian()
    }

    fn apply(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(v.clone())
    }

    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(v.clone())
    }

    fn frozen_flow(
        &self,
        w: &DVector<f64>,
        g: &DVector<f64>,
        t: f64,
    ) -> Option<Result<DVector<f64>, GeometryError>> {
        Some(self.check_point(w).map(|()| w - g * t))
    }
}

/// `H(w) = H0` for a fixed SPD matrix.
pub struct FixedSpdMetric {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl FixedSpdMetric {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, GeometryError> {
        if matrix.nrows() != matrix.ncols() {
            return Err(GeometryError::InvalidParams("fixed_spd matrix must be square".into()));
        }
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + matrix.abs().max()) {
            return Err(GeometryError::NotSpd("fixed_spd matrix is not symmetric".into()));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| GeometryError::NotSpd("fixed_spd matrix is not positive definite".into()))?;
        Ok(Self { matrix, chol })
    }
}

impl Metric for FixedSpdMetric {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn name(&self) -> String {
        "fixed_spd".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite())
    }

    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(self.matrix.clone())
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::hessian()
    }

    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(self.chol.solve(v))
    }

    fn frozen_flow(
        &self,
        w: &DVector<f64>,
        g: &DVector<f64>,
        t: f64,
    ) -> Option<Result<DVector<f64>, GeometryError>> {
        Some(self.check_point(w).map(|()| w - self.chol.solve(g) * t))
    }
}

/// `H(w) = I + w w^T`. Not a Hessian map for d >= 2.
pub struct RankOneBumpMetric {
    dim: usize,
}

impl RankOneBumpMetric {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Metric for RankOneBumpMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        "rank_one_bump".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite())
    }

    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(DMatrix::identity(self.dim, self.dim) + w * w.transpose())
    }

    fn apply(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        Ok(v + w * w.dot(v))
    }

    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        // Sherman-Morrison: (I + w w^T)^{-1} v = v - w (w.v)/(1 + w.w)
        self.check_point(w)?;
        Ok(v - w * (w.dot(v) / (1.0 + w.norm_squared())))
    }
}

/// `H(w) = I + w w^T / (1 + w^T w)`; eigenvalues in [1, 2) at every `w`.
pub struct BoundedRankOneMetric {
    dim: usize,
}

impl BoundedRankOneMetric {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Metric for BoundedRankOneMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        "bounded_rank_one".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite())
    }

    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(w)?;
        let c = 1.0 / (1.0 + w.norm_squared());
        Ok(DMatrix::identity(self.dim, self.dim) + (w * w.transpose()) * c)
    }

    fn apply(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        let c = 1.0 / (1.0 + w.norm_squared());
        Ok(v + w * (c * w.dot(v)))
    }

    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        let c = 1.0 / (1.0 + w.norm_squared());
        Ok(v - w * (c * w.dot(v) / (1.0 + c * w.norm_squared())))
    }
}

/// Spec for constructing a built-in metric by name. The `kind` strings are
/// the ones accepted by the harness config schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean { dim: usize },
    FixedSpd { matrix: Vec<Vec<f64>> },
    HessianOf { potential: PotentialSpec },
    RankOneBump { dim: usize },
    BoundedRankOne { dim: usize },
    DiagArcsinh { alpha: f64, dim: usize },
    LyapunovInverse { n: usize },
}

/// Built-in metric names, as used in configs and `list-builtins`.
pub const BUILTIN_METRICS: &[&str] = &[
    "euclidean",
    "fixed_spd",
    "hessian_of",
    "rank_one_bump",
    "bounded_rank_one",
    "diag_arcsinh",
    "lyapunov_inverse",
];

pub fn make_builtin_metric(spec: &MetricSpec) -> Result<Arc<dyn Metric>, GeometryError> {
    match spec {
        MetricSpec::Euclidean { dim } => {
            check_dim(*dim)?;
            Ok(Arc::new(EuclideanMetric::new(*dim)))
        }
        MetricSpec::FixedSpd { matrix } => {
            let m = matrix_from_rows(matrix)?;
            Ok(Arc::new(FixedSpdMetric::new(m)?))
        }
        MetricSpec::HessianOf { potential } => {
            let psi = make_builtin_potential(potential)
                .map_err(|e| GeometryError::InvalidParams(e.to_string()))?;
            Ok(potential_to_metric(psi))
        }
        MetricSpec::RankOneBump { dim } => {
            check_dim(*dim)?;
            Ok(Arc::new(RankOneBumpMetric::new(*dim)))
        }
        MetricSpec::BoundedRankOne { dim } => {
            check_dim(*dim)?;
            Ok(Arc::new(BoundedRankOneMetric::new(*dim)))
        }
        MetricSpec::DiagArcsinh { alpha, dim } => {
            // Same operator family as the Hessian of the arcsinh potential,
            // so it shares that implementation (and its closed-form flow).
            check_dim(*dim)?;
            let psi = make_builtin_potential(&PotentialSpec::Arcsinh { alpha: *alpha, dim: *dim })
                .map_err(|e| GeometryError::InvalidParams(e.to_string()))?;
            Ok(potential_to_metric(psi))
        }
        MetricSpec::LyapunovInverse { n } => {
            check_dim(*n)?;
            Ok(Arc::new(LyapunovInverseMetric::new(*n)))
        }
    }
}

fn check_dim(dim: usize) -> Result<(), GeometryError> {
    if dim == 0 {
        return Err(GeometryError::InvalidParams("dimension must be positive".into()));
    }
    Ok(())
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, GeometryError> {
    if rows.is_empty() {
        return Err(GeometryError::InvalidParams("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(GeometryError::InvalidParams("matrix rows have inconsistent lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// `H(w)^{-1} v` at a point.
pub fn metric_solve(
    metric: &dyn Metric,
    w: &Point,
    v: &DVector<f64>,
) -> Result<DVector<f64>, GeometryError> {
    metric.solve(w.coords(), v)
}

/// Local distance `sqrt(dw^T H(w) dw)` induced by the metric at `w`.
pub fn local_distance(
    metric: &dyn Metric,
    w: &Point,
    dw: &DVector<f64>,
) -> Result<f64, GeometryError> {
    let hdw = metric.apply(w.coords(), dw)?;
    let q = dw.dot(&hdw);
    // Guard tiny negative round-off for dw near zero.
    Ok(q.max(0.0).sqrt())
}

/// Seeded sample of points from the metric's domain.
pub fn sample_domain_points(metric: &dyn Metric, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| metric.sample_domain_point(&mut rng)).collect()
}
