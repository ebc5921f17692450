//! Experiment configuration: JSON schema types, parsing, semantic
//! validation (collecting every violation, not just the first), and
//! construction of the geometry/objective/method objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mirrorless_core::analysis::ChartSpec;
use mirrorless_core::geometry::{
    make_builtin_metric, matrix_from_rows, sym_dim, MetricSpec, Point,
};
use mirrorless_core::integrators::DEFAULT_TOL;
use mirrorless_core::objectives::{
    matrix_sensing, LeastSquares, Objective, Quadratic, SampleStream, StochasticLeastSquares,
};
use mirrorless_core::optimizers::{
    scale_ratio, Geometry, Method, MirrorlessMode, RunConfig, SampleMode, TwoScaleConfig,
};
use mirrorless_core::potentials::{make_builtin_potential, PotentialSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("configuration is invalid:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Violations(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn default_name() -> String {
    "experiment".into()
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_fd_step() -> f64 {
    mirrorless_core::analysis::HESSIAN_CHECK_DEFAULT_FD_STEP
}

fn default_check_tol() -> f64 {
    mirrorless_core::analysis::HESSIAN_CHECK_DEFAULT_TOL
}

fn default_num_points() -> usize {
    20
}

fn default_margin_floor() -> f64 {
    -1e-10
}

fn default_objective_target() -> f64 {
    1e-12
}

fn default_max_time() -> f64 {
    2e4
}

fn default_reference_tol() -> f64 {
    1e-12
}

fn default_identity_tol() -> f64 {
    1e-12
}

fn default_gradient_check_err() -> f64 {
    1e-5
}

/// A matrix supplied inline, from a CSV file, or as seeded Gaussian data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    Csv { csv: String },
    Gaussian { gaussian: GaussianMatrix },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMatrix {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    Inline(Vec<f64>),
    Csv { csv: String },
    Gaussian { gaussian: GaussianVector },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianVector {
    pub len: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Geometry block: either a built-in metric name or a potential name (the
/// latter also enables classic MD and the two-scale runner).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    // Metric-only geometries.
    Euclidean { dim: usize },
    FixedSpd { matrix: MatrixSource },
    RankOneBump { dim: usize },
    BoundedRankOne { dim: usize },
    DiagArcsinh { alpha: f64, dim: usize },
    LyapunovInverse { n: usize },
    HessianOf { potential: PotentialConfig },
    // Potential geometries (metric = Hessian, link available).
    SqEuclidean { dim: usize },
    NegEntropy { dim: usize },
    PPower { p: f64, dim: usize },
    Arcsinh { alpha: f64, dim: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    SqEuclidean { dim: usize },
    NegEntropy { dim: usize },
    PPower { p: f64, dim: usize },
    Arcsinh { alpha: f64, dim: usize },
}

impl PotentialConfig {
    fn spec(&self) -> PotentialSpec {
        match self {
            PotentialConfig::SqEuclidean { dim } => PotentialSpec::SqEuclidean { dim: *dim },
            PotentialConfig::NegEntropy { dim } => PotentialSpec::NegEntropy { dim: *dim },
            PotentialConfig::PPower { p, dim } => PotentialSpec::PPower { p: *p, dim: *dim },
            PotentialConfig::Arcsinh { alpha, dim } => {
                PotentialSpec::Arcsinh { alpha: *alpha, dim: *dim }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Quadratic { q: MatrixSource, b: VectorSource },
    LeastSquares { a: MatrixSource, b: VectorSource },
    LeastSquaresStochastic { a: MatrixSource, b: VectorSource },
    MatrixSensing { operators: Vec<MatrixSource>, y: VectorSource },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    pub eta: f64,
    pub iterations: usize,
    pub w_init: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Force mirrorless steps through the ODE even when a closed form exists.
    #[serde(default)]
    pub verify_ode: bool,
    #[serde(default)]
    pub stochastic: Option<StochasticBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticBlock {
    pub nu: f64,
    /// Explicit sample-index sequence; omitted means the seeded stream.
    #[serde(default)]
    pub samples: Option<Vec<usize>>,
    /// Replace every draw by the exact pool mean.
    #[serde(default)]
    pub pool_average: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisConfig {
    HessianMapCheck {
        #[serde(default)]
        points: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_num_points")]
        num_points: usize,
        #[serde(default = "default_fd_step")]
        fd_step: f64,
        #[serde(default = "default_check_tol")]
        tol: f64,
        #[serde(default)]
        expect_hessian_map: Option<bool>,
        #[serde(default)]
        expect_witness_violation: Option<[f64; 2]>,
    },
    Theorem1Check {
        eta: f64,
        iterations: usize,
        w_init: Vec<f64>,
        #[serde(default = "default_tol")]
        tol: f64,
        max_deviation: f64,
    },
    RateBoundCheck {
        alpha: f64,
        beta: f64,
        iterations: usize,
        w_init: Vec<f64>,
        #[serde(default = "default_tol")]
        ode_tol: f64,
        #[serde(default = "default_margin_floor")]
        min_margin: f64,
    },
    GradientCheck {
        #[serde(default = "default_num_points")]
        num_points: usize,
        #[serde(default = "default_gradient_check_err")]
        max_error: f64,
    },
    BregmanProjection {
        w_init: Vec<f64>,
    },
    KktResidual {
        max_residual: f64,
    },
    ImplicitBiasCheck {
        w_init: Vec<f64>,
        #[serde(default = "default_objective_target")]
        objective_target: f64,
        #[serde(default = "default_max_time")]
        max_time: f64,
        rel_tol: f64,
        kkt_tol: f64,
        #[serde(default = "default_tol")]
        ode_tol: f64,
    },
    ChartTransport {
        chart: ChartSpec,
        method: Method,
        eta: f64,
        iterations: usize,
        w_init: Vec<f64>,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default)]
        max_deviation: Option<f64>,
        /// Also run at eta/2 (doubled iterations) and require the gap ratio
        /// to fall in this range.
        #[serde(default)]
        halving_ratio: Option<[f64; 2]>,
    },
    DiscretizationSweep {
        horizon: f64,
        etas: Vec<f64>,
        w_init: Vec<f64>,
        #[serde(default = "default_reference_tol")]
        reference_tol: f64,
        #[serde(default)]
        ratio_range: Option<[f64; 2]>,
    },
    TwoScaleIdentity {
        batches: Vec<usize>,
        eta: f64,
        iterations: usize,
        w_init: Vec<f64>,
        #[serde(default = "default_identity_tol")]
        tol: f64,
    },
    EndpointCheck {
        expected: Vec<f64>,
        tol: f64,
    },
    Reproducibility {},
}

impl AnalysisConfig {
    pub fn op_name(&self) -> &'static str {
        match self {
            AnalysisConfig::HessianMapCheck { .. } => "hessian_map_check",
            AnalysisConfig::Theorem1Check { .. } => "theorem1_check",
            AnalysisConfig::RateBoundCheck { .. } => "rate_bound_check",
            AnalysisConfig::GradientCheck { .. } => "gradient_check",
            AnalysisConfig::BregmanProjection { .. } => "bregman_projection",
            AnalysisConfig::KktResidual { .. } => "kkt_residual",
            AnalysisConfig::ImplicitBiasCheck { .. } => "implicit_bias_check",
            AnalysisConfig::ChartTransport { .. } => "chart_transport",
            AnalysisConfig::DiscretizationSweep { .. } => "discretization_sweep",
            AnalysisConfig::TwoScaleIdentity { .. } => "two_scale_identity",
            AnalysisConfig::EndpointCheck { .. } => "endpoint_check",
            AnalysisConfig::Reproducibility {} => "reproducibility",
        }
    }
}

pub const ANALYSIS_OPS: &[&str] = &[
    "hessian_map_check",
    "theorem1_check",
    "rate_bound_check",
    "gradient_check",
    "bregman_projection",
    "kkt_residual",
    "implicit_bias_check",
    "chart_transport",
    "discretization_sweep",
    "two_scale_identity",
    "endpoint_check",
    "reproducibility",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default)]
    pub method: Option<MethodConfig>,
    #[serde(default)]
    pub analyses: Vec<AnalysisConfig>,
    #[serde(default)]
    pub output: Option<String>,
    /// Base directory for relative CSV paths; set when loaded from a file.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Parse and validate a config document. Semantic violations are collected
/// and reported together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    let violations = validate(&cfg);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Violations(violations))
    }
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

/// Collect every semantic violation in the config: dimension mismatches,
/// method/geometry incompatibilities, scale-ratio integrality, and
/// out-of-range parameters. Unknown keys and structural problems are
/// rejected earlier by strict deserialization.
pub fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    let mut violations = Vec::new();

    let geometry = match build_geometry(&cfg.geometry) {
        Ok(g) => Some(g),
        Err(e) => {
            violations.push(format!("geometry: {e}"));
            None
        }
    };
    let built = match &cfg.objective {
        Some(oc) => match build_objective(oc, cfg.base_dir.as_deref()) {
            Ok(b) => Some(b),
            Err(e) => {
                violations.push(format!("objective: {e}"));
                None
            }
        },
        None => None,
    };

    let gdim = geometry.as_ref().map(|g| g.dim());
    let odim = built.as_ref().map(|b| b.objective.dim());
    if let (Some(gd), Some(od)) = (gdim, odim) {
        if gd != od {
            violations.push(format!(
                "geometry dimension {gd} does not match objective dimension {od}"
            ));
        }
    }

    if let Some(mc) = &cfg.method {
        if mc.eta <= 0.0 {
            violations.push("method.eta must be positive".into());
        }
        if mc.tol <= 0.0 {
            violations.push("method.tol must be positive".into());
        }
        if mc.w_init.iter().any(|x| !x.is_finite()) {
            violations.push("method.w_init has non-finite entries".into());
        }
        if let Some(gd) = gdim {
            if mc.w_init.len() != gd {
                violations.push(format!(
                    "method.w_init has length {}, geometry expects {gd}",
                    mc.w_init.len()
                ));
            }
        }
        if cfg.objective.is_none() {
            violations.push("method requires an objective".into());
        }
        if mc.method == Method::MdClassic {
            if let Some(g) = &geometry {
                if g.potential().is_none() {
                    violations.push(
                        "classic MD requires a potential; this geometry supplies only a metric"
                            .into(),
                    );
                }
            }
        }
        if let Some(sb) = &mc.stochastic {
            if mc.method != Method::MdClassic {
                violations.push("a stochastic block requires method md_classic".into());
            }
            if sb.nu <= 0.0 {
                violations.push("stochastic.nu must be positive".into());
            } else if scale_ratio(mc.eta, sb.nu).is_none() {
                violations.push(format!(
                    "eta/nu or nu/eta must be a positive integer (eta = {}, nu = {})",
                    mc.eta, sb.nu
                ));
            }
            if built.as_ref().is_some_and(|b| b.stochastic.is_none()) {
                violations.push("a stochastic block requires a stochastic objective".into());
            }
            if sb.pool_average && sb.samples.is_some() {
                violations.push("stochastic.samples and pool_average are mutually exclusive".into());
            }
        }
    }

    for (idx, analysis) in cfg.analyses.iter().enumerate() {
        let tag = format!("analyses[{idx}] ({})", analysis.op_name());
        let needs_objective = !matches!(
            analysis,
            AnalysisConfig::HessianMapCheck { .. } | AnalysisConfig::Reproducibility {}
        );
        if needs_objective && cfg.objective.is_none() {
            violations.push(format!("{tag}: requires an objective"));
        }
        let needs_trajectory = matches!(
            analysis,
            AnalysisConfig::KktResidual { .. }
                | AnalysisConfig::EndpointCheck { .. }
                | AnalysisConfig::Reproducibility {}
        );
        if needs_trajectory && cfg.method.is_none() {
            violations.push(format!("{tag}: requires a method block"));
        }
        let needs_potential = matches!(
            analysis,
            AnalysisConfig::Theorem1Check { .. }
                | AnalysisConfig::BregmanProjection { .. }
                | AnalysisConfig::KktResidual { .. }
                | AnalysisConfig::ImplicitBiasCheck { .. }
                | AnalysisConfig::TwoScaleIdentity { .. }
        );
        if needs_potential {
            if let Some(g) = &geometry {
                if g.potential().is_none() {
                    violations.push(format!("{tag}: requires a potential geometry"));
                }
            }
        }
        let needs_lsq = matches!(
            analysis,
            AnalysisConfig::BregmanProjection { .. }
                | AnalysisConfig::KktResidual { .. }
                | AnalysisConfig::ImplicitBiasCheck { .. }
        );
        if needs_lsq && built.as_ref().is_some_and(|b| b.least_squares.is_none()) {
            violations.push(format!("{tag}: requires a least-squares style objective"));
        }
        if matches!(analysis, AnalysisConfig::TwoScaleIdentity { .. })
            && built.as_ref().is_some_and(|b| b.stochastic.is_none())
        {
            violations.push(format!("{tag}: requires a stochastic objective"));
        }
        match analysis {
            AnalysisConfig::DiscretizationSweep { horizon, etas, .. } => {
                for eta in etas {
                    if *eta <= 0.0 {
                        violations.push(format!("{tag}: stepsizes must be positive"));
                    } else {
                        let k = horizon / eta;
                        if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
                            violations.push(format!(
                                "{tag}: horizon {horizon} is not an integer multiple of eta {eta}"
                            ));
                        }
                    }
                }
            }
            AnalysisConfig::ChartTransport { chart, method, .. } => {
                if *method == Method::MdClassic {
                    violations.push(format!("{tag}: chart transport supports ngd, md_mirrorless, flow_reference"));
                }
                if let (Some(gd), Ok(c)) = (gdim, mirrorless_core::analysis::make_builtin_chart(chart)) {
                    if c.dim() != gd {
                        violations.push(format!(
                            "{tag}: chart dimension {} does not match geometry dimension {gd}",
                            c.dim()
                        ));
                    }
                }
            }
            AnalysisConfig::TwoScaleIdentity { batches, .. } => {
                if batches.is_empty() || batches.contains(&0) {
                    violations.push(format!("{tag}: batches must be positive"));
                }
            }
            _ => {}
        }
    }

    violations
}

/// Built objective with its concrete facets retained for analyses that need
/// the raw design matrix or the sample pool.
pub struct BuiltObjectiveParts {
    pub objective: Arc<dyn Objective>,
    pub least_squares: Option<Arc<LeastSquares>>,
    pub stochastic: Option<Arc<StochasticLeastSquares>>,
}

pub fn build_geometry(gc: &GeometryConfig) -> Result<Geometry, String> {
    let metric_spec = match gc {
        GeometryConfig::Euclidean { dim } => MetricSpec::Euclidean { dim: *dim },
        GeometryConfig::FixedSpd { matrix } => {
            let m = resolve_matrix(matrix, None).map_err(|e| e.to_string())?;
            MetricSpec::FixedSpd { matrix: to_rows(&m) }
        }
        GeometryConfig::RankOneBump { dim } => MetricSpec::RankOneBump { dim: *dim },
        GeometryConfig::BoundedRankOne { dim } => MetricSpec::BoundedRankOne { dim: *dim },
        GeometryConfig::DiagArcsinh { alpha, dim } => {
            MetricSpec::DiagArcsinh { alpha: *alpha, dim: *dim }
        }
        GeometryConfig::LyapunovInverse { n } => MetricSpec::LyapunovInverse { n: *n },
        GeometryConfig::HessianOf { potential } => {
            let psi = make_builtin_potential(&potential.spec()).map_err(|e| e.to_string())?;
            return Ok(Geometry::from_potential(psi));
        }
        GeometryConfig::SqEuclidean { dim } => {
            let psi = make_builtin_potential(&PotentialSpec::SqEuclidean { dim: *dim })
                .map_err(|e| e.to_string())?;
            return Ok(Geometry::from_potential(psi));
        }
        GeometryConfig::NegEntropy { dim } => {
            let psi = make_builtin_potential(&PotentialSpec::NegEntropy { dim: *dim })
                .map_err(|e| e.to_string())?;
            return Ok(Geometry::from_potential(psi));
        }
        GeometryConfig::PPower { p, dim } => {
            let psi = make_builtin_potential(&PotentialSpec::PPower { p: *p, dim: *dim })
                .map_err(|e| e.to_string())?;
            return Ok(Geometry::from_potential(psi));
        }
        GeometryConfig::Arcsinh { alpha, dim } => {
            let psi = make_builtin_potential(&PotentialSpec::Arcsinh { alpha: *alpha, dim: *dim })
                .map_err(|e| e.to_string())?;
            return Ok(Geometry::from_potential(psi));
        }
    };
    let metric = make_builtin_metric(&metric_spec).map_err(|e| e.to_string())?;
    Ok(Geometry::from_metric(metric))
}

pub fn build_objective(
    oc: &ObjectiveConfig,
    base_dir: Option<&Path>,
) -> Result<BuiltObjectiveParts, String> {
    match oc {
        ObjectiveConfig::Quadratic { q, b } => {
            let q = resolve_matrix(q, base_dir)?;
            let b = resolve_vector(b, base_dir)?;
            let obj = Quadratic::new(q, b).map_err(|e| e.to_string())?;
            Ok(BuiltObjectiveParts {
                objective: Arc::new(obj),
                least_squares: None,
                stochastic: None,
            })
        }
        ObjectiveConfig::LeastSquares { a, b } => {
            let a = resolve_matrix(a, base_dir)?;
            let b = resolve_vector(b, base_dir)?;
            let lsq = Arc::new(LeastSquares::new(a, b).map_err(|e| e.to_string())?);
            Ok(BuiltObjectiveParts {
                objective: lsq.clone(),
                least_squares: Some(lsq),
                stochastic: None,
            })
        }
        ObjectiveConfig::LeastSquaresStochastic { a, b } => {
            let a = resolve_matrix(a, base_dir)?;
            let b = resolve_vector(b, base_dir)?;
            let sls = Arc::new(StochasticLeastSquares::new(a, b).map_err(|e| e.to_string())?);
            Ok(BuiltObjectiveParts {
                objective: sls.clone(),
                least_squares: None,
                stochastic: Some(sls),
            })
        }
        ObjectiveConfig::MatrixSensing { operators, y } => {
            let ops = operators
                .iter()
                .map(|m| resolve_matrix(m, base_dir))
                .collect::<Result<Vec<_>, _>>()?;
            let y = resolve_vector(y, base_dir)?;
            if let Some(first) = ops.first() {
                let d = sym_dim(first.nrows());
                let _ = d; // dimension consistency checked against geometry later
            }
            let lsq = Arc::new(matrix_sensing(&ops, y).map_err(|e| e.to_string())?);
            Ok(BuiltObjectiveParts {
                objective: lsq.clone(),
                least_squares: Some(lsq),
                stochastic: None,
            })
        }
    }
}

/// Translate a method block into a core [`RunConfig`], applying overrides.
pub fn build_run_config(
    mc: &MethodConfig,
    seed: u64,
    tol_override: Option<f64>,
) -> RunConfig {
    let mut cfg = RunConfig::new(
        mc.method,
        mc.eta,
        mc.iterations,
        Point::from_slice(&mc.w_init),
    )
    .with_tol(tol_override.unwrap_or(mc.tol));
    if mc.verify_ode {
        cfg = cfg.with_mode(MirrorlessMode::ForceOde);
    }
    if let Some(sb) = &mc.stochastic {
        let samples = if sb.pool_average {
            SampleMode::PoolAverage
        } else {
            match &sb.samples {
                Some(idx) => SampleMode::Stream(SampleStream::Fixed(idx.clone())),
                None => SampleMode::Stream(SampleStream::Seeded { seed }),
            }
        };
        cfg.stochastic = Some(TwoScaleConfig { nu: sb.nu, samples });
    }
    cfg
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn resolve_matrix(src: &MatrixSource, base_dir: Option<&Path>) -> Result<DMatrix<f64>, String> {
    match src {
        MatrixSource::Inline(rows) => matrix_from_rows(rows).map_err(|e| e.to_string()),
        MatrixSource::Csv { csv } => {
            let rows = read_csv_rows(&resolve_path(csv, base_dir))?;
            matrix_from_rows(&rows).map_err(|e| e.to_string())
        }
        MatrixSource::Gaussian { gaussian } => {
            if gaussian.rows == 0 || gaussian.cols == 0 {
                return Err("gaussian matrix needs positive rows and cols".into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(gaussian.seed);
            let normal = Normal::new(0.0, gaussian.scale).map_err(|e| e.to_string())?;
            Ok(DMatrix::from_fn(gaussian.rows, gaussian.cols, |_, _| normal.sample(&mut rng)))
        }
    }
}

pub fn resolve_vector(src: &VectorSource, base_dir: Option<&Path>) -> Result<DVector<f64>, String> {
    match src {
        VectorSource::Inline(v) => Ok(DVector::from_column_slice(v)),
        VectorSource::Csv { csv } => {
            let rows = read_csv_rows(&resolve_path(csv, base_dir))?;
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            if flat.is_empty() {
                return Err("CSV vector is empty".into());
            }
            Ok(DVector::from_vec(flat))
        }
        VectorSource::Gaussian { gaussian } => {
            if gaussian.len == 0 {
                return Err("gaussian vector needs positive length".into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(gaussian.seed);
            let normal = Normal::new(0.0, gaussian.scale).map_err(|e| e.to_string())?;
            Ok(DVector::from_fn(gaussian.len, |_, _| normal.sample(&mut rng)))
        }
    }
}

fn resolve_path(path: &str, base_dir: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        p
    } else {
        match base_dir {
            Some(dir) => dir.join(p),
            None => p,
        }
    }
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format!("bad number {f:?}: {e}")))
            .collect::<Result<Vec<f64>, String>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format!("{} contains no data", path.display()));
    }
    Ok(rows)
}
