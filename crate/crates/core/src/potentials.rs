//! Strictly convex potentials with link, inverse link, Hessian, and Bregman
//! divergence. The Hessian of a potential is a metric tensor (see
//! [`potential_to_metric`]), which is the bridge between classic mirror
//! descent and the geometry module.
//!
//! Sign convention: the entropy potential is implemented as the *negative*
//! entropy `sum_i w_i log w_i` on `w > 0`, which is strictly convex with
//! link `log w + 1` and inverse link `exp(z - 1)`. Squared l_p norms are
//! replaced by the separable p-power potential `(1/p) sum |w_i|^p`, whose
//! Hessian stays diagonal and well conditioned away from the axes.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::{Capabilities, GeometryError, Metric, Point};

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("invalid potential parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point outside potential domain: {0}")]
    OutOfDomain(String),
    #[error("link target outside the range of the link function: {0}")]
    LinkTargetOutOfRange(String),
    #[error("Newton link inversion did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDidNotConverge { iterations: usize, residual: f64 },
    #[error("line search left the potential domain")]
    LineSearchDomainExit,
}

/// A strictly convex potential `psi` with gradient (link), Hessian, and
/// inverse link. All built-ins are separable, so Hessians are diagonal; the
/// trait still exposes a dense Hessian for generic consumers.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn in_domain(&self, w: &DVector<f64>) -> bool;

    fn value(&self, w: &DVector<f64>) -> Result<f64, PotentialError>;

    /// The link function `grad psi`.
    fn link(&self, w: &DVector<f64>) -> Result<DVector<f64>, PotentialError>;

    /// Diagonal of the Hessian, when the potential is separable.
    fn hessian_diag(&self, w: &DVector<f64>) -> Result<Option<DVector<f64>>, PotentialError>;

    fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, PotentialError> {
        match self.hessian_diag(w)? {
            Some(d) => Ok(DMatrix::from_diagonal(&d)),
            None => Err(PotentialError::InvalidParams(format!(
                "{} has no dense Hessian implementation",
                self.name()
            ))),
        }
    }

    /// `(grad psi)^{-1}`, closed form for every built-in.
    fn inverse_link(&self, z: &DVector<f64>) -> Result<DVector<f64>, PotentialError>;

    fn sample_domain_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.dim(), |_, _| rng.random_range(-2.0..2.0))
    }

    fn check_point(&self, w: &DVector<f64>) -> Result<(), PotentialError> {
        if w.len() != self.dim() {
            return Err(PotentialError::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        if !self.in_domain(w) {
            return Err(PotentialError::OutOfDomain(format!(
                "{} is undefined at the given point",
                self.name()
            )));
        }
        Ok(())
    }
}

/// `psi(w) = 1/2 ||w||^2`; link is the identity.
pub struct SqEuclidean {
    dim: usize,
}

impl Potential for SqEuclidean {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        "sq_euclidean".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite())
    }

    fn value(&self, w: &DVector<f64>) -> Result<f64, PotentialError> {
        self.check_point(w)?;
        Ok(0.5 * w.norm_squared())
    }

    fn link(&self, w: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        self.check_point(w)?;
        Ok(w.clone())
    }

    fn hessian_diag(&self, w: &DVector<f64>) -> Result<Option<DVector<f64>>, PotentialError> {
        self.check_point(w)?;
        Ok(Some(DVector::from_element(self.dim, 1.0)))
    }

    fn inverse_link(&self, z: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        if z.len() != self.dim {
            return Err(PotentialError::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        Ok(z.clone())
    }
}

/// Negative entropy `psi(w) = sum w_i log w_i` on the positive orthant.
pub struct NegEntropy {
    dim: usize,
}

impl Potential for NegEntropy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        "neg_entropy".into()
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite() && *x > 0.0)
    }

    fn value(&self, w: &DVector<f64>) -> Result<f64, PotentialError> {
        self.check_point(w)?;
        Ok(w.iter().map(|x| x * x.ln()).sum())
    }

    fn link(&self, w: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        self.check_point(w)?;
        Ok(w.map(|x| x.ln() + 1.0))
    }

    fn hessian_diag(&self, w: &DVector<f64>) -> Result<Option<DVector<f64>>, PotentialError> {
        self.check_point(w)?;
        Ok(Some(w.map(|x| 1.0 / x)))
    }

    fn inverse_link(&self, z: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        if z.len() != self.dim {
            return Err(PotentialError::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        let w = z.map(|x| (x - 1.0).exp());
        if !self.in_domain(&w) {
            // exp underflow to 0 leaves the open orthant.
            return Err(PotentialError::LinkTargetOutOfRange(
                "inverse link left the positive orthant".into(),
            ));
        }
        Ok(w)
    }

    fn sample_domain_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.dim, |_, _| rng.random_range(0.25..3.0))
    }
}

/// Separable p-power potential `psi(w) = (1/p) sum |w_i|^p`, `1 < p <= 2`.
/// For `p < 2` the Hessian blows up on the axes, so the domain excludes them.
pub struct PPower {
    dim: usize,
    p: f64,
}

impl Potential for PPower {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        format!("p_power({})", self.p)
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite() && (self.p == 2.0 || *x != 0.0))
    }

    fn value(&self, w: &DVector<f64>) -> Result<f64, PotentialError> {
        self.check_point(w)?;
        Ok(w.iter().map(|x| x.abs().powf(self.p)).sum::<f64>() / self.p)
    }

    fn link(&self, w: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        self.check_point(w)?;
        Ok(w.map(|x| x.signum() * x.abs().powf(self.p - 1.0)))
    }

    fn hessian_diag(&self, w: &DVector<f64>) -> Result<Option<DVector<f64>>, PotentialError> {
        self.check_point(w)?;
        Ok(Some(w.map(|x| (self.p - 1.0) * x.abs().powf(self.p - 2.0))))
    }

    fn inverse_link(&self, z: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        if z.len() != self.dim {
            return Err(PotentialError::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        let w = z.map(|x| x.signum() * x.abs().powf(1.0 / (self.p - 1.0)));
        if !self.in_domain(&w) {
            return Err(PotentialError::LinkTargetOutOfRange(
                "zero dual coordinate has no preimage for p < 2".into(),
            ));
        }
        Ok(w)
    }

    fn sample_domain_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.dim, |_, _| {
            let mag = rng.random_range(0.25..2.0);
            if rng.random_range(0.0..1.0) < 0.5 {
                -mag
            } else {
                mag
            }
        })
    }
}

/// `psi_alpha(w) = sum_i w_i arcsinh(w_i / 2 alpha^2) - sqrt(w_i^2 + 4 alpha^4)`,
/// the potential induced by diagonal-network regression; its Hessian is
/// `diag(1 / sqrt(w^2 + 4 alpha^4))`.
pub struct Arcsinh {
    dim: usize,
    alpha: f64,
}

impl Arcsinh {
    fn two_a2(&self) -> f64 {
        2.0 * self.alpha * self.alpha
    }
}

impl Potential for Arcsinh {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        format!("arcsinh({})", self.alpha)
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        w.iter().all(|x| x.is_finite())
    }

    fn value(&self, w: &DVector<f64>) -> Result<f64, PotentialError> {
        self.check_point(w)?;
        let t = self.two_a2();
        Ok(w.iter().map(|x| x * (x / t).asinh() - (x * x + t * t).sqrt()).sum())
    }

    fn link(&self, w: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        self.check_point(w)?;
        let t = self.two_a2();
        Ok(w.map(|x| (x / t).asinh()))
    }

    fn hessian_diag(&self, w: &DVector<f64>) -> Result<Option<DVector<f64>>, PotentialError> {
        self.check_point(w)?;
        let t2 = self.two_a2() * self.two_a2();
        Ok(Some(w.map(|x| 1.0 / (x * x + t2).sqrt())))
    }

    fn inverse_link(&self, z: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
        if z.len() != self.dim {
            return Err(PotentialError::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        let t = self.two_a2();
        let w = z.map(|x| t * x.sinh());
        if !w.iter().all(|x| x.is_finite()) {
            return Err(PotentialError::LinkTargetOutOfRange("sinh overflow".into()));
        }
        Ok(w)
    }
}

/// Spec for constructing a built-in potential by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    SqEuclidean { dim: usize },
    NegEntropy { dim: usize },
    PPower { p: f64, dim: usize },
    Arcsinh { alpha: f64, dim: usize },
}

pub const BUILTIN_POTENTIALS: &[&str] = &["sq_euclidean", "neg_entropy", "p_power", "arcsinh"];

pub fn make_builtin_potential(spec: &PotentialSpec) -> Result<Arc<dyn Potential>, PotentialError> {
    let dim = match spec {
        PotentialSpec::SqEuclidean { dim }
        | PotentialSpec::NegEntropy { dim }
        | PotentialSpec::PPower { dim, .. }
        | PotentialSpec::Arcsinh { dim, .. } => *dim,
    };
    if dim == 0 {
        return Err(PotentialError::InvalidParams("dimension must be positive".into()));
    }
    match spec {
        PotentialSpec::SqEuclidean { .. } => Ok(Arc::new(SqEuclidean { dim })),
        PotentialSpec::NegEntropy { .. } => Ok(Arc::new(NegEntropy { dim })),
        PotentialSpec::PPower { p, .. } => {
            if !(*p > 1.0 && *p <= 2.0) {
                return Err(PotentialError::InvalidParams(format!(
                    "p_power requires 1 < p <= 2, got {p}"
                )));
            }
            Ok(Arc::new(PPower { dim, p: *p }))
        }
        PotentialSpec::Arcsinh { alpha, .. } => {
            if !(*alpha > 0.0) {
                return Err(PotentialError::InvalidParams(format!(
                    "arcsinh requires alpha > 0, got {alpha}"
                )));
            }
            Ok(Arc::new(Arcsinh { dim, alpha: *alpha }))
        }
    }
}

/// Bregman divergence `D_psi(w, w') = psi(w) - psi(w') - <grad psi(w'), w - w'>`.
pub fn bregman_divergence(
    psi: &dyn Potential,
    w: &Point,
    w_ref: &Point,
) -> Result<f64, PotentialError> {
    let (w, wr) = (w.coords(), w_ref.coords());
    let val = psi.value(w)?;
    let val_ref = psi.value(wr)?;
    let link_ref = psi.link(wr)?;
    Ok(val - val_ref - link_ref.dot(&(w - wr)))
}

/// The metric tensor `H(w) = hess psi(w)` induced by a potential. Carries the
/// closed-form frozen flow from the dual-linear interpolation, so mirrorless
/// steps on Hessian metrics avoid the ODE path.
pub struct HessianMetric {
    psi: Arc<dyn Potential>,
}

impl HessianMetric {
    pub fn new(psi: Arc<dyn Potential>) -> Self {
        Self { psi }
    }

    pub fn potential(&self) -> &Arc<dyn Potential> {
        &self.psi
    }

    fn wrap(e: PotentialError) -> GeometryError {
        match e {
            PotentialError::DimensionMismatch { expected, got } => {
                GeometryError::DimensionMismatch { expected, got }
            }
            PotentialError::OutOfDomain(msg) => GeometryError::OutOfDomain(msg),
            other => GeometryError::SolveFailed(other.to_string()),
        }
    }
}

impl Metric for HessianMetric {
    fn dim(&self) -> usize {
        self.psi.dim()
    }

    fn name(&self) -> String {
        format!("hessian_of({})", self.psi.name())
    }

    fn in_domain(&self, w: &DVector<f64>) -> bool {
        self.psi.in_domain(w)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::hessian()
    }

    fn materialize(&self, w: &DVector<f64>) -> Result<DMatrix<f64>, GeometryError> {
        self.psi.hessian(w).map_err(Self::wrap)
    }

    fn apply(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        match self.psi.hessian_diag(w).map_err(Self::wrap)? {
            Some(d) => Ok(d.component_mul(v)),
            None => Ok(self.materialize(w)? * v),
        }
    }

    fn solve(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        match self.psi.hessian_diag(w).map_err(Self::wrap)? {
            Some(d) => Ok(v.component_div(&d)),
            None => {
                let h = self.materialize(w)?;
                let chol = Cholesky::new(h).ok_or_else(|| {
                    GeometryError::NotSpd(format!("{} not SPD at point", self.name()))
                })?;
                Ok(chol.solve(v))
            }
        }
    }

    /// Linear interpolation in the dual: `link(w(t)) = link(w) - t g`.
    fn frozen_flow(
        &self,
        w: &DVector<f64>,
        g: &DVector<f64>,
        t: f64,
    ) -> Option<Result<DVector<f64>, GeometryError>> {
        let res = (|| {
            let z = self.psi.link(w).map_err(Self::wrap)? - g * t;
            self.psi.inverse_link(&z).map_err(Self::wrap)
        })();
        Some(res)
    }

    fn sample_domain_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        self.psi.sample_domain_point(rng)
    }
}

/// The Hessian-map metric of a potential.
pub fn potential_to_metric(psi: Arc<dyn Potential>) -> Arc<dyn Metric> {
    Arc::new(HessianMetric::new(psi))
}

/// Invert the link function by damped Newton, for potentials without a closed
/// form. Uses the Hessian as the Jacobian of the link and an Armijo line
/// search on `||link(w) - z||^2`.
pub fn link_invert_newton(
    psi: &dyn Potential,
    z: &DVector<f64>,
    w_guess: &Point,
) -> Result<Point, PotentialError> {
    const MAX_ITERS: usize = 100;
    const MAX_HALVINGS: usize = 60;
    let mut w = w_guess.coords().clone();
    psi.check_point(&w)?;
    let target_tol = 1e-10 * (1.0 + z.norm());

    let mut residual = psi.link(&w)? - z;
    for _ in 0..MAX_ITERS {
        if residual.norm() <= target_tol {
            return Ok(Point::with_chart(w, w_guess.chart()));
        }
        let step = match psi.hessian_diag(&w)? {
            Some(d) => -residual.component_div(&d),
            None => {
                let h = psi.hessian(&w)?;
                let chol = Cholesky::new(h).ok_or_else(|| {
                    PotentialError::InvalidParams("Hessian not SPD during Newton".into())
                })?;
                -chol.solve(&residual)
            }
        };
        let base = residual.norm_squared();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &w + &step * t;
            if psi.in_domain(&cand) {
                let r = psi.link(&cand)? - z;
                if r.norm_squared() <= (1.0 - 1e-4 * t) * base {
                    w = cand;
                    residual = r;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(PotentialError::LineSearchDomainExit);
        }
    }
    Err(PotentialError::NewtonDidNotConverge {
        iterations: MAX_ITERS,
        residual: residual.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn all_builtin_specs() -> Vec<PotentialSpec> {
        vec![
            PotentialSpec::SqEuclidean { dim: 3 },
            PotentialSpec::NegEntropy { dim: 3 },
            PotentialSpec::PPower { p: 1.5, dim: 3 },
            PotentialSpec::Arcsinh { alpha: 0.8, dim: 3 },
        ]
    }

    #[test]
    fn arcsinh_link_and_hessian_examples() {
        let psi = make_builtin_potential(&PotentialSpec::Arcsinh { alpha: 1.0, dim: 2 }).unwrap();
        let zero = DVector::zeros(2);
        let link = psi.link(&zero).unwrap();
        assert!(link.abs().max() < 1e-15);
        let h = psi.hessian(&zero).unwrap();
        assert!((h[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((h[(1, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn neg_entropy_inverse_link_round_trip() {
        let psi = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let w = DVector::from_element(2, E);
        let back = psi.inverse_link(&psi.link(&w).unwrap()).unwrap();
        assert!((back - w).abs().max() < 1e-14);
    }

    #[test]
    fn bregman_examples() {
        let sq = make_builtin_potential(&PotentialSpec::SqEuclidean { dim: 2 }).unwrap();
        let d = bregman_divergence(
            sq.as_ref(),
            &Point::from_slice(&[1.0, 2.0]),
            &Point::from_slice(&[0.0, 0.0]),
        )
        .unwrap();
        assert!((d - 2.5).abs() < 1e-14);

        for spec in all_builtin_specs() {
            let psi = make_builtin_potential(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let w = Point::new(psi.sample_domain_point(&mut rng));
            let d = bregman_divergence(psi.as_ref(), &w, &w).unwrap();
            assert!(d.abs() < 1e-12, "{}: D(w,w) = {d}", psi.name());
        }

        // Hand evaluation: D(w, w') = 2(e - 2) for w = (1,1), w' = (e,e).
        let ne = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let d = bregman_divergence(
            ne.as_ref(),
            &Point::from_slice(&[1.0, 1.0]),
            &Point::from_slice(&[E, E]),
        )
        .unwrap();
        assert!((d - 2.0 * (E - 2.0)).abs() < 1e-12);
        assert!((d - 1.436563656918090).abs() < 1e-12);
    }

    #[test]
    fn bregman_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for spec in all_builtin_specs() {
            let psi = make_builtin_potential(&spec).unwrap();
            for _ in 0..50 {
                let w = Point::new(psi.sample_domain_point(&mut rng));
                let wr = Point::new(psi.sample_domain_point(&mut rng));
                let d = bregman_divergence(psi.as_ref(), &w, &wr).unwrap();
                assert!(d >= -1e-12, "{}: negative divergence {d}", psi.name());
            }
        }
    }

    #[test]
    fn potential_to_metric_examples() {
        let sq = make_builtin_potential(&PotentialSpec::SqEuclidean { dim: 2 }).unwrap();
        let m = potential_to_metric(sq);
        let h = m.materialize(&DVector::from_column_slice(&[3.0, -1.0])).unwrap();
        assert!((h - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!(m.capabilities().closed_form_flow);

        let ne = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let m = potential_to_metric(ne);
        let h = m.materialize(&DVector::from_column_slice(&[0.5, 0.25])).unwrap();
        assert!((h[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((h[(1, 1)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_link_round_trip_on_sampled_domain() {
        for spec in all_builtin_specs() {
            let psi = make_builtin_potential(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            for _ in 0..100 {
                let w = psi.sample_domain_point(&mut rng);
                let back = psi.inverse_link(&psi.link(&w).unwrap()).unwrap();
                let err = (&back - &w).norm();
                assert!(err <= 1e-8 * (1.0 + w.norm()), "{}: {err}", psi.name());
            }
        }
    }

    #[test]
    fn link_is_gradient_of_value() {
        let eps = 1e-5;
        for spec in all_builtin_specs() {
            let psi = make_builtin_potential(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            for _ in 0..20 {
                let w = psi.sample_domain_point(&mut rng);
                let link = psi.link(&w).unwrap();
                for i in 0..psi.dim() {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += eps;
                    wm[i] -= eps;
                    if !(psi.in_domain(&wp) && psi.in_domain(&wm)) {
                        continue;
                    }
                    let fd = (psi.value(&wp).unwrap() - psi.value(&wm).unwrap()) / (2.0 * eps);
                    let err = (fd - link[i]).abs() / (1.0 + link[i].abs());
                    assert!(err <= 1e-5, "{}: FD link error {err}", psi.name());
                }
            }
        }
    }

    #[test]
    fn hessian_matches_link_jacobian() {
        let eps = 1e-5;
        for spec in all_builtin_specs() {
            let psi = make_builtin_potential(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(41);
            for _ in 0..20 {
                let w = psi.sample_domain_point(&mut rng);
                let h = psi.hessian(&w).unwrap();
                for i in 0..psi.dim() {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += eps;
                    wm[i] -= eps;
                    if !(psi.in_domain(&wp) && psi.in_domain(&wm)) {
                        continue;
                    }
                    let col = (psi.link(&wp).unwrap() - psi.link(&wm).unwrap()) / (2.0 * eps);
                    for j in 0..psi.dim() {
                        let err = (col[j] - h[(j, i)]).abs() / (1.0 + h[(j, i)].abs());
                        assert!(err <= 1e-4, "{}: Hessian FD error {err}", psi.name());
                    }
                }
            }
        }
    }

    #[test]
    fn strong_convexity_lower_bound_for_sq_euclidean() {
        // D(w, w') >= mu/2 ||w - w'||^2 with mu = 1.
        let psi = make_builtin_potential(&PotentialSpec::SqEuclidean { dim: 3 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..50 {
            let w = Point::new(psi.sample_domain_point(&mut rng));
            let wr = Point::new(psi.sample_domain_point(&mut rng));
            let d = bregman_divergence(psi.as_ref(), &w, &wr).unwrap();
            let gap = (w.coords() - wr.coords()).norm_squared();
            assert!(d >= 0.5 * gap - 1e-12);
        }
    }

    #[test]
    fn newton_link_inversion_examples() {
        let sq = make_builtin_potential(&PotentialSpec::SqEuclidean { dim: 2 }).unwrap();
        let z = DVector::from_column_slice(&[3.0, 4.0]);
        let w = link_invert_newton(sq.as_ref(), &z, &Point::from_slice(&[0.0, 0.0])).unwrap();
        assert!((w.coords() - z).abs().max() < 1e-10);

        let ne = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let z = DVector::from_element(2, 1.0);
        let w = link_invert_newton(ne.as_ref(), &z, &Point::from_slice(&[0.5, 2.0])).unwrap();
        assert!((w.coords() - DVector::from_element(2, 1.0)).abs().max() < 1e-9);

        let ar = make_builtin_potential(&PotentialSpec::Arcsinh { alpha: 1.0, dim: 2 }).unwrap();
        let z = DVector::from_column_slice(&[0.5f64.asinh(), 0.0]);
        let w = link_invert_newton(ar.as_ref(), &z, &Point::from_slice(&[0.2, 0.2])).unwrap();
        assert!((w.coords() - DVector::from_column_slice(&[1.0, 0.0])).abs().max() < 1e-9);
    }

    #[test]
    fn newton_reports_unreachable_target() {
        // log cosh has link tanh with range (-1, 1); a target outside it
        // cannot converge.
        struct LogCosh;
        impl Potential for LogCosh {
            fn dim(&self) -> usize {
                1
            }
            fn name(&self) -> String {
                "log_cosh".into()
            }
            fn in_domain(&self, w: &DVector<f64>) -> bool {
                w[0].is_finite()
            }
            fn value(&self, w: &DVector<f64>) -> Result<f64, PotentialError> {
                Ok(w[0].cosh().ln())
            }
            fn link(&self, w: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
                Ok(w.map(f64::tanh))
            }
            fn hessian_diag(
                &self,
                w: &DVector<f64>,
            ) -> Result<Option<DVector<f64>>, PotentialError> {
                Ok(Some(w.map(|x| 1.0 / x.cosh().powi(2))))
            }
            fn inverse_link(&self, z: &DVector<f64>) -> Result<DVector<f64>, PotentialError> {
                Ok(z.map(f64::atanh))
            }
        }
        let z = DVector::from_column_slice(&[1.5]);
        let res = link_invert_newton(&LogCosh, &z, &Point::from_slice(&[0.0]));
        assert!(res.is_err());
    }

    #[test]
    fn param_validation() {
        assert!(make_builtin_potential(&PotentialSpec::PPower { p: 2.5, dim: 2 }).is_err());
        assert!(make_builtin_potential(&PotentialSpec::PPower { p: 1.0, dim: 2 }).is_err());
        assert!(make_builtin_potential(&PotentialSpec::Arcsinh { alpha: 0.0, dim: 2 }).is_err());
        assert!(make_builtin_potential(&PotentialSpec::NegEntropy { dim: 0 }).is_err());
    }

    #[test]
    fn entropy_domain_enforced() {
        let ne = make_builtin_potential(&PotentialSpec::NegEntropy { dim: 2 }).unwrap();
        let w = DVector::from_column_slice(&[1.0, -0.5]);
        assert!(matches!(ne.value(&w), Err(PotentialError::OutOfDomain(_))));
    }
}
