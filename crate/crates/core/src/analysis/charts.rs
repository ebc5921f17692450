//! Chart changes (smooth invertible reparametrizations) and pullback
//! metrics. A chart map `g` carries a metric `H` on the original chart to
//! `H~(w~) = J^{-T} H(g^{-1}(w~)) J^{-1}` with `J` the Jacobian of `g`,
//! which preserves local distances to first order.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::geometry::{matrix_from_rows, Capabilities, GeometryError, Metric};

use super::AnalysisError;

/// A smooth invertible change of parameters with invertible Jacobian.
pub trait ChartMap: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn is_affine(&self) -> bool;

    fn forward(&self, w: &DVector<f64>) -> DVector<f64>;

    fn inverse(&self, w_tilde: &DVector<f64>) -> Result<DVector<f64>, AnalysisError>;

    /// Jacobian of `forward` at `w` (in the original chart).
    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64>;
}

/// `w~ = S w + c` with invertible `S`.
pub struct AffineChart {
    scale: DMatrix<f64>,
    offset: DVector<f64>,
    inverse_scale: DMatrix<f64>,
}

impl AffineChart {
    pub fn new(scale: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, AnalysisError> {
        if scale.nrows() != scale.ncols() || scale.nrows() != offset.len() {
            return Err(AnalysisError::InvalidInput("affine chart needs square S matching c".into()));
        }
        let inverse_scale = scale
            .clone()
            .try_inverse()
            .ok_or_else(|| AnalysisError::SingularJacobian("affine scale is singular".into()))?;
        Ok(Self { scale, offset, inverse_scale })
    }
}

impl ChartMap for AffineChart {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn name(&self) -> String {
        "affine".into()
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn forward(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.scale * w + &self.offset
    }

    fn inverse(&self, w_tilde: &DVector<f64>) -> Result<DVector<f64>, AnalysisError> {
        Ok(&self.inverse_scale * (w_tilde - &self.offset))
    }

    fn jacobian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        self.scale.clone()
    }
}

/// Componentwise cubic `w~_i = w_i + w_i^3`, strictly increasing so globally
/// invertible; the inverse is the real Cardano root of `t^3 + t = c`.
pub struct CubicChart {
    dim: usize,
}

impl CubicChart {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn invert_scalar(c: f64) -> f64 {
        // t^3 + t - c = 0 has one real root; the discriminant term
        // c^2/4 + 1/27 is always positive.
        let s = (c * c / 4.0 + 1.0 / 27.0).sqrt();
        (c / 2.0 + s).cbrt() + (c / 2.0 - s).cbrt()
    }
}

impl ChartMap for CubicChart {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        "cubic".into()
    }

    fn is_affine(&self) -> bool {
        false
    }

    fn forward(&self, w: &DVector<f64>) -> DVector<f64> {
        w.map(|x| x + x * x * x)
    }

    fn inverse(&self, w_tilde: &DVector<f64>) -> Result<DVector<f64>, AnalysisError> {
        Ok(w_tilde.map(Self::invert_scalar))
    }

    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&w.map(|x| 1.0 + 3.0 * x * x))
    }
}

/// Chart spec as it appears in configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChartSpec {
    Identity { dim: usize },
    Affine { scale: Vec<Vec<f64>>, #[serde(default)] offset: Option<Vec<f64>> },
    Cubic { dim: usize },
}

pub const BUILTIN_CHARTS: &[&str] = &["identity", "affine", "cubic"];

pub fn make_builtin_chart(spec: &ChartSpec) -> Result<Arc<dyn ChartMap>, AnalysisError> {
    match spec {
        ChartSpec::Identity { dim } => {
            let s = DMatrix::identity(*dim, *dim);
            Ok(Arc::new(AffineChart::new(s, DVector::zeros(*dim))?))
        }
        ChartSpec::Affine { scale, offset } => {
            let s = matrix_from_rows(scale).map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
            let c = match offset {
                Some(o) => DVector::from_column_slice(o),
                None => DVector::zeros(s.nrows()),
            };
            Ok(Arc::new(AffineChart::new(s, c)?))
        }
        ChartSpec::Cubic { dim } => Ok(Arc::new(CubicChart::new(*dim))),
    }
}

/// The metric on the transformed chart that makes `g` an isometry.
pub struct PullbackMetric {
    base: Arc<dyn Metric>,
    chart: Arc<dyn ChartMap>,
}

impl PullbackMetric {
    pub fn new(base: Arc<dyn Metric>, chart: Arc<dyn ChartMap>) -> Result<Self, AnalysisError> {
        if base.dim() != chart.dim() {
            return Err(AnalysisError::InvalidInput(format!(
                "chart dimension {} does not match metric dimension {}",
                chart.dim(),
                base.dim()
            )));
        }
        Ok(Self { base, chart })
    }

    fn pull_point(&self, w_tilde: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.chart
            .inverse(w_tilde)
            .map_err(|e| GeometryError::OutOfDomain(format!("chart inversion failed: {e}")))
    }
}

impl Metric for PullbackMetric {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn name(&self) -> String {
        format!("pullback({}, {})", self.base.name(), self.chart.name())
    }

    fn in_domain(&self, w_tilde: &DVector<f64>) -> bool {
        match self.chart.inverse(w_tilde) {
            Ok(w) => self.base.in_domain(&w),
            Err(_) => false,
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::dense()
    }

    fn materialize(&self, w_tilde: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(w_tilde)?;
        let w = self.pull_point(w_tilde)?;
        let j = self.chart.jacobian(&w);
        let j_inv = j.try_inverse().ok_or_else(|| {
            GeometryError::SolveFailed("singular chart Jacobian".into())
        })?;
        let h = self.base.materialize(&w)?;
        let pulled = j_inv.transpose() * h * &j_inv;
        Ok((&pulled + pulled.transpose()) * 0.5)
    }

    fn solve(&self, w_tilde: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        // H~^{-1} = J H^{-1} J^T.
        self.check_point(w_tilde)?;
        let w = self.pull_point(w_tilde)?;
        let j = self.chart.jacobian(&w);
        let inner = self.base.solve(&w, &(j.transpose() * v))?;
        Ok(j * inner)
    }

    fn sample_domain_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        self.chart.forward(&self.base.sample_domain_point(rng))
    }
}

/// Pull a metric back through a chart map.
pub fn pullback_metric(
    metric: Arc<dyn Metric>,
    chart: Arc<dyn ChartMap>,
) -> Result<Arc<dyn Metric>, AnalysisError> {
    Ok(Arc::new(PullbackMetric::new(metric, chart)?))
}
