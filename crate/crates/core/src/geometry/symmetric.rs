//! Vectorization of symmetric matrices and the Lyapunov-inverse metric.
//!
//! Symmetric n x n matrices are flattened in row-major upper-triangle order
//! with off-diagonal entries scaled by sqrt(2), so the Frobenius inner
//! product of matrices equals the dot product of their vectorizations. Under
//! this isometry the Lyapunov operator `V -> W V + V W` is an SPD matrix on
//! `R^{n(n+1)/2}` whenever `W` is SPD, and its inverse is a valid metric
//! tensor.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{Capabilities, GeometryError, Metric};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Vectorized dimension `n(n+1)/2` of symmetric n x n matrices.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Side length `n` recovered from a vectorized dimension, if valid.
pub fn sym_side(d: usize) -> Option<usize> {
    let n = ((8 * d + 1) as f64).sqrt() as usize / 2;
    for cand in n.saturating_sub(1)..=n + 1 {
        if sym_dim(cand) == d {
            return Some(cand);
        }
    }
    None
}

/// Isometric vectorization of a symmetric matrix.
pub fn sym_vec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut out = DVector::zeros(sym_dim(n));
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            out[idx] = if i == j { m[(i, j)] } else { SQRT2 * m[(i, j)] };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`sym_vec`].
pub fn sym_unvec(v: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
    let n = sym_side(v.len()).ok_or(GeometryError::DimensionMismatch {
        expected: 0,
        got: v.len(),
    })?;
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            let x = if i == j { v[idx] } else { v[idx] / SQRT2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    Ok(m)
}

/// Metric over vectorized symmetric matrices whose inverse is the Lyapunov
/// operator: `H(W)^{-1} V = W V + V W`, so `H(W) G` solves `W X + X W = G`.
pub struct LyapunovInverseMetric {
    n: usize,
}

impl LyapunovInverseMetric {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    fn point_matrix(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        let m = sym_unvec(w)?;
        if m.nrows() != self.n {
            return Err(GeometryError::DimensionMismatch { expected: sym_dim(self.n), got: w.len() });
        }
        Ok(m)
    }
}

impl Metric for LyapunovInverseMetric {
    fn dim(&self) -> usize {
        sym_dim(self.n)
    }

    fn name(&self) -> String {
        "lyapunov_inverse".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        if !w.iter().all(|x| x.is_finite()) {
            return false;
        }
        match sym_unvec(w) {
            Ok(m) if m.nrows() == self.n => Cholesky::new(m).is_some(),
            _ => false,
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::dense()
    }

    /// `H(W) v`: solve the Lyapunov equation `W X + X W = V` by
    /// eigendecomposition of `W`.
    fn apply(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        let wm = self.point_matrix(w)?;
        let vm = sym_unvec(v)?;
        let eig = SymmetricEigen::new(wm);
        let vt = eig.eigenvectors.transpose() * vm * &eig.eigenvectors;
        let n = self.n;
        let mut x = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let denom = eig.eigenvalues[i] + eig.eigenvalues[j];
                if denom <= 0.0 {
                    return Err(GeometryError::SolveFailed(
                        "Lyapunov operator is singular (W not positive definite)".into(),
                    ));
                }
                x[(i, j)] = vt[(i, j)] / denom;
            }
        }
        let sol = &eig.eigenvectors * x * eig.eigenvectors.transpose();
        Ok(sym_vec(&sol))
    }

    /// `H(W)^{-1} v = sym_vec(W V + V W)`.
    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_point(w)?;
        let wm = self.point_matrix(w)?;
        let vm = sym_unvec(v)?;
        Ok(sym_vec(&(&wm * &vm + vm * wm)))
    }

    /// Materialize by applying the Lyapunov operator to the vectorized basis
    /// and inverting, so the checker can read off entries `H_{ij}`.
    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.check_point(w)?;
        let d = self.dim();
        let mut lyap = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut e = DVector::zeros(d);
            e[k] = 1.0;
            let col = self.solve(w, &e)?;
            lyap.set_column(k, &col);
        }
        // Symmetrize before inverting; the operator is self-adjoint in the
        // Frobenius inner product, so asymmetry is pure round-off.
        let lyap = (&lyap + lyap.transpose()) * 0.5;
        let chol = Cholesky::new(lyap).ok_or_else(|| {
            GeometryError::NotSpd("Lyapunov operator not SPD at this point".into())
        })?;
        Ok(chol.inverse())
    }

    fn sample_domain_point(&self, rng: &mut dyn rand::RngCore) -> DVector<f64> {
        use rand::Rng;
        let n = self.n;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.4;
        sym_vec(&spd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solve_example_at_identity() {
        // W = I (n=2), V = diag(1,3): W V + V W = 2V
        let metric = LyapunovInverseMetric::new(2);
        let w = sym_vec(&DMatrix::identity(2, 2));
        let v = sym_vec(&DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 3.0])));
        let out = metric.solve(&w, &v).unwrap();
        let m = sym_unvec(&out).unwrap();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((m[(1, 1)] - 6.0).abs() < 1e-14);
        assert!(m[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn apply_inverts_lyapunov_operator() {
        let metric = LyapunovInverseMetric::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let w = metric.sample_domain_point(&mut rng);
            let vm = {
                let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
                (&a + a.transpose()) * 0.5
            };
            let v = sym_vec(&vm);
            let lyap = metric.solve(&w, &v).unwrap();
            let back = metric.apply(&w, &lyap).unwrap();
            let err = (&back - &v).norm();
            assert!(err <= 1e-8 * (1.0 + v.norm()), "Lyapunov consistency error {err}");
        }
    }

    #[test]
    fn frobenius_preserved_by_vectorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let a = (&a + a.transpose()) * 0.5;
            let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let b = (&b + b.transpose()) * 0.5;
            let frob = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * b[(i, j)])
                .sum::<f64>();
            let dot = sym_vec(&a).dot(&sym_vec(&b));
            assert!((frob - dot).abs() <= 1e-12 * (1.0 + frob.abs()));
        }
    }

    #[test]
    fn unvec_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let a = (&a + a.transpose()) * 0.5;
        let back = sym_unvec(&sym_vec(&a)).unwrap();
        assert!((&a - back).abs().max() < 1e-15);
    }

    #[test]
    fn non_spd_point_is_outside_domain() {
        let metric = LyapunovInverseMetric::new(2);
        let w = sym_vec(&DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0])));
        assert!(!metric.in_domain(&w));
        let v = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        assert!(matches!(metric.solve(&w, &v), Err(GeometryError::OutOfDomain(_))));
    }
}
