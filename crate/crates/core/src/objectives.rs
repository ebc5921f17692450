//! Optimization objectives with gradients, including finite-sum stochastic
//! forms with deterministic seeded sample streams.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::{matrix_from_rows, sym_dim, sym_vec, GeometryError};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid objective parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A differentiable objective `F: R^d -> R`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn value(&self, w: &DVector<f64>) -> f64;

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;

    /// `(w*, F*)` when analytically known.
    fn optimum_hint(&self) -> Option<(DVector<f64>, f64)> {
        None
    }

    /// Strong-convexity constant w.r.t. the Euclidean norm, when known.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Smoothness (gradient Lipschitz) constant w.r.t. the Euclidean norm.
    fn smoothness(&self) -> Option<f64> {
        None
    }
}

/// A finite-pool stochastic objective `F(w) = E_z f(w, z)` with uniform `z`.
pub trait Stochastic: Objective {
    fn pool_size(&self) -> usize;

    /// Gradient of the per-sample loss `f(w, z = index)`.
    fn sample_gradient(&self, w: &DVector<f64>, index: usize) -> DVector<f64>;
}

/// `F(w) = 1/2 w^T Q w - b^T w` with SPD `Q`.
pub struct Quadratic {
    q: DMatrix<f64>,
    b: DVector<f64>,
    optimum: DVector<f64>,
    lambda: f64,
    gamma: f64,
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ObjectiveError> {
        if q.nrows() != q.ncols() {
            return Err(ObjectiveError::InvalidParams("Q must be square".into()));
        }
        if q.nrows() != b.len() {
            return Err(ObjectiveError::DimensionMismatch { expected: q.nrows(), got: b.len() });
        }
        let asym = (&q - q.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + q.abs().max()) {
            return Err(ObjectiveError::InvalidParams("Q must be symmetric".into()));
        }
        let chol = Cholesky::new(q.clone())
            .ok_or_else(|| ObjectiveError::InvalidParams("Q must be positive definite".into()))?;
        let optimum = chol.solve(&b);
        let eigs = q.symmetric_eigenvalues();
        let lambda = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let gamma = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { q, b, optimum, lambda, gamma })
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn name(&self) -> String {
        "quadratic".into()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.q * w)) - self.b.dot(w)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.q * w - &self.b
    }

    fn optimum_hint(&self) -> Option<(DVector<f64>, f64)> {
        Some((self.optimum.clone(), self.value(&self.optimum)))
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.lambda)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.gamma)
    }
}

/// `F(w) = ||A w - b||^2`.
pub struct LeastSquares {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lambda: f64,
    gamma: f64,
    optimum: Option<(DVector<f64>, f64)>,
    label: String,
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ObjectiveError> {
        Self::with_label(a, b, "least_squares")
    }

    fn with_label(a: DMatrix<f64>, b: DVector<f64>, label: &str) -> Result<Self, ObjectiveError> {
        if a.nrows() != b.len() {
            return Err(ObjectiveError::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(ObjectiveError::InvalidParams("A must be nonempty".into()));
        }
        let gram = a.transpose() * &a;
        let eigs = gram.symmetric_eigenvalues();
        let lambda = 2.0 * eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let gamma = 2.0 * eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Minimum-norm least-squares solution; F* is the residual there.
        let svd = a.clone().svd(true, true);
        let optimum = svd.solve(&b, 1e-12).ok().map(|w| {
            let r = &a * &w - &b;
            (w, r.norm_squared())
        });
        Ok(Self { a, b, lambda: lambda.max(0.0), gamma, optimum, label: label.into() })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.b
    }
}

impl Objective for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn name(&self) -> String {
        self.label.clone()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        (&self.a * w - &self.b).norm_squared()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * (&self.a * w - &self.b) * 2.0
    }

    fn optimum_hint(&self) -> Option<(DVector<f64>, f64)> {
        self.optimum.clone()
    }

    fn strong_convexity(&self) -> Option<f64> {
        (self.lambda > 0.0).then_some(self.lambda)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.gamma)
    }
}

/// Finite-sum stochastic form of least squares: `f(w, i) = m (a_i.w - b_i)^2`
/// over the `m` rows, so the uniform expectation over `i` is exactly `F`.
pub struct StochasticLeastSquares {
    base: LeastSquares,
}

impl StochasticLeastSquares {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ObjectiveError> {
        Ok(Self { base: LeastSquares::with_label(a, b, "least_squares_stochastic")? })
    }

    pub fn base(&self) -> &LeastSquares {
        &self.base
    }
}

impl Objective for StochasticLeastSquares {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn name(&self) -> String {
        self.base.name()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        self.base.value(w)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.base.gradient(w)
    }

    fn optimum_hint(&self) -> Option<(DVector<f64>, f64)> {
        self.base.optimum_hint()
    }

    fn strong_convexity(&self) -> Option<f64> {
        self.base.strong_convexity()
    }

    fn smoothness(&self) -> Option<f64> {
        self.base.smoothness()
    }
}

impl Stochastic for StochasticLeastSquares {
    fn pool_size(&self) -> usize {
        self.base.a.nrows()
    }

    fn sample_gradient(&self, w: &DVector<f64>, index: usize) -> DVector<f64> {
        let m = self.pool_size() as f64;
        let row = self.base.a.row(index).transpose();
        let residual = row.dot(w) - self.base.b[index];
        row * (2.0 * m * residual)
    }
}

/// Matrix sensing `F(W) = ||A(W) - y||^2` with `A(W)_i = <A_i, W>` on
/// symmetric `W`, expressed in the shared symmetric vectorization so it runs
/// through the generic steppers alongside the Lyapunov-inverse metric.
pub fn matrix_sensing(
    operators: &[DMatrix<f64>],
    y: DVector<f64>,
) -> Result<LeastSquares, ObjectiveError> {
    if operators.is_empty() {
        return Err(ObjectiveError::InvalidParams("matrix_sensing needs operators".into()));
    }
    let n = operators[0].nrows();
    for op in operators {
        if op.nrows() != n || op.ncols() != n {
            return Err(ObjectiveError::InvalidParams(
                "matrix_sensing operators must be square with equal sides".into(),
            ));
        }
        let asym = (op - op.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + op.abs().max()) {
            return Err(ObjectiveError::InvalidParams(
                "matrix_sensing operators must be symmetric".into(),
            ));
        }
    }
    if operators.len() != y.len() {
        return Err(ObjectiveError::DimensionMismatch { expected: operators.len(), got: y.len() });
    }
    // <A_i, W>_F = sym_vec(A_i) . sym_vec(W), so this is least squares in the
    // vectorized coordinates.
    let d = sym_dim(n);
    let mut a = DMatrix::zeros(operators.len(), d);
    for (i, op) in operators.iter().enumerate() {
        a.set_row(i, &sym_vec(op).transpose());
    }
    LeastSquares::with_label(a, y, "matrix_sensing")
}

/// Spec for constructing a built-in objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic { q: Vec<Vec<f64>>, b: Vec<f64> },
    LeastSquares { a: Vec<Vec<f64>>, b: Vec<f64> },
    LeastSquaresStochastic { a: Vec<Vec<f64>>, b: Vec<f64> },
    MatrixSensing { operators: Vec<Vec<Vec<f64>>>, y: Vec<f64> },
}

pub const BUILTIN_OBJECTIVES: &[&str] =
    &["quadratic", "least_squares", "least_squares_stochastic", "matrix_sensing"];

/// A constructed objective, deterministic or stochastic.
pub enum BuiltObjective {
    Deterministic(Arc<dyn Objective>),
    Stochastic(Arc<StochasticLeastSquares>),
}

impl BuiltObjective {
    pub fn as_objective(&self) -> Arc<dyn Objective> {
        match self {
            BuiltObjective::Deterministic(o) => o.clone(),
            BuiltObjective::Stochastic(s) => s.clone(),
        }
    }

    pub fn as_stochastic(&self) -> Option<Arc<StochasticLeastSquares>> {
        match self {
            BuiltObjective::Deterministic(_) => None,
            BuiltObjective::Stochastic(s) => Some(s.clone()),
        }
    }
}

pub fn make_builtin_objective(spec: &ObjectiveSpec) -> Result<BuiltObjective, ObjectiveError> {
    match spec {
        ObjectiveSpec::Quadratic { q, b } => {
            let q = matrix_from_rows(q)?;
            let b = DVector::from_column_slice(b);
            Ok(BuiltObjective::Deterministic(Arc::new(Quadratic::new(q, b)?)))
        }
        ObjectiveSpec::LeastSquares { a, b } => {
            let a = matrix_from_rows(a)?;
            let b = DVector::from_column_slice(b);
            Ok(BuiltObjective::Deterministic(Arc::new(LeastSquares::new(a, b)?)))
        }
        ObjectiveSpec::LeastSquaresStochastic { a, b } => {
            let a = matrix_from_rows(a)?;
            let b = DVector::from_column_slice(b);
            Ok(BuiltObjective::Stochastic(Arc::new(StochasticLeastSquares::new(a, b)?)))
        }
        ObjectiveSpec::MatrixSensing { operators, y } => {
            let ops = operators
                .iter()
                .map(|rows| matrix_from_rows(rows))
                .collect::<Result<Vec<_>, _>>()?;
            let y = DVector::from_column_slice(y);
            Ok(BuiltObjective::Deterministic(Arc::new(matrix_sensing(&ops, y)?)))
        }
    }
}

/// Max relative error between the analytic gradient and central finite
/// differences at step `1e-5`.
pub fn gradient_check(obj: &dyn Objective, w: &DVector<f64>) -> f64 {
    let eps = 1e-5;
    let grad = obj.gradient(w);
    let mut worst = 0.0f64;
    for i in 0..obj.dim() {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[i] += eps;
        wm[i] -= eps;
        let fd = (obj.value(&wp) - obj.value(&wm)) / (2.0 * eps);
        let err = (fd - grad[i]).abs() / (1.0 + grad[i].abs());
        worst = worst.max(err);
    }
    worst
}

/// Deterministic sample-index stream: a pure function of `(seed, counter)`,
/// so replay and concurrent use are trivially reproducible. `Fixed` pins an
/// explicit index sequence for hand-computed cases.
#[derive(Debug, Clone)]
pub enum SampleStream {
    Seeded { seed: u64 },
    Fixed(Vec<usize>),
}

impl SampleStream {
    pub fn index_at(&self, counter: u64, pool: usize) -> Result<usize, ObjectiveError> {
        if pool == 0 {
            return Err(ObjectiveError::InvalidParams("empty sample pool".into()));
        }
        match self {
            SampleStream::Seeded { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_word_pos(counter as u128 * 4);
                Ok(rng.random_range(0..pool))
            }
            SampleStream::Fixed(indices) => {
                let idx = *indices.get(counter as usize).ok_or_else(|| {
                    ObjectiveError::InvalidParams(format!(
                        "fixed sample stream exhausted at draw {counter}"
                    ))
                })?;
                if idx >= pool {
                    return Err(ObjectiveError::InvalidParams(format!(
                        "fixed sample index {idx} out of pool 0..{pool}"
                    )));
                }
                Ok(idx)
            }
        }
    }
}
