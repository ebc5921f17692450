//! Bundled experiment suites. Each acceptance criterion maps to one or more
//! bundled configs; a criterion passes when all of its configs pass. Configs
//! are embedded at compile time and can be overridden with a directory of
//! JSON files for ad-hoc suites.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mirrorless_core::batch;

use crate::config::{parse_config, ExperimentConfig};
use crate::experiment::{run_experiment, HarnessError, RunOverrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteName {
    Acceptance,
    Quick,
}

impl SuiteName {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "acceptance" => Some(SuiteName::Acceptance),
            "quick" => Some(SuiteName::Quick),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteName::Acceptance => "acceptance",
            SuiteName::Quick => "quick",
        }
    }
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[ $( ($name, include_str!(concat!("../suites/acceptance/", $name, ".json"))) ),* ]
    };
}

/// The acceptance suite: criterion id prefixes (c1..c9) group the configs.
pub const ACCEPTANCE_CONFIGS: &[(&str, &str)] = bundled![
    "c1_neg_entropy_quadratic",
    "c1_neg_entropy_least_squares",
    "c1_arcsinh_small_quadratic",
    "c1_arcsinh_small_least_squares",
    "c1_arcsinh_large_quadratic",
    "c1_arcsinh_large_least_squares",
    "c2_rank_one_bump",
    "c2_lyapunov_inverse",
    "c2_euclidean",
    "c2_diag_arcsinh",
    "c2_hessian_neg_entropy",
    "c3_rate_bound",
    "c4_discretization_order",
    "c5_implicit_bias_alpha_small",
    "c5_implicit_bias_alpha_one",
    "c6_two_scale_sq_euclidean",
    "c6_two_scale_neg_entropy",
    "c6_two_scale_hand_case",
    "c7_flow_cubic_chart",
    "c7_mirrorless_affine_chart",
    "c7_mirrorless_cubic_halving",
    "c8_flow_sanity",
    "c9_reproducibility",
];

pub const QUICK_CONFIGS: &[(&str, &str)] = &[
    ("c8_flow_sanity", include_str!("../suites/acceptance/c8_flow_sanity.json")),
    ("c2_rank_one_bump", include_str!("../suites/acceptance/c2_rank_one_bump.json")),
    ("c2_euclidean", include_str!("../suites/acceptance/c2_euclidean.json")),
    ("c6_two_scale_hand_case", include_str!("../suites/acceptance/c6_two_scale_hand_case.json")),
    ("c1_neg_entropy_quadratic", include_str!("../suites/acceptance/c1_neg_entropy_quadratic.json")),
    ("c9_reproducibility", include_str!("../suites/acceptance/c9_reproducibility.json")),
];

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: String,
    pub configs: Vec<ConfigResult>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ConfigResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct SuiteReport {
    pub suite: String,
    pub criteria: Vec<CriterionResult>,
    pub all_pass: bool,
    pub report_path: Option<PathBuf>,
}

pub fn bundled_configs(name: SuiteName) -> &'static [(&'static str, &'static str)] {
    match name {
        SuiteName::Acceptance => ACCEPTANCE_CONFIGS,
        SuiteName::Quick => QUICK_CONFIGS,
    }
}

/// Run a bundled suite. Independent configs execute on the worker pool; each
/// writes only inside its own subdirectory of the suite output dir.
pub fn run_suite(name: SuiteName, overrides: &RunOverrides) -> Result<SuiteReport, HarnessError> {
    let configs: Vec<(String, String)> = bundled_configs(name)
        .iter()
        .map(|(n, text)| (n.to_string(), text.to_string()))
        .collect();
    run_suite_from_configs(name.as_str(), &configs, overrides)
}

/// Run a suite from a directory of `*.json` configs (sorted by file name).
pub fn run_suite_from_dir(
    label: &str,
    dir: &Path,
    overrides: &RunOverrides,
) -> Result<SuiteReport, HarnessError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(HarnessError::Internal(format!("no configs found in {}", dir.display())));
    }
    let configs: Vec<(String, String)> = entries
        .iter()
        .map(|p| {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let text = fs::read_to_string(p)
                .map_err(|source| HarnessError::Io { path: p.clone(), source })?;
            Ok((stem, text))
        })
        .collect::<Result<_, HarnessError>>()?;
    run_suite_from_configs(label, &configs, overrides)
}

pub fn run_suite_from_configs(
    label: &str,
    configs: &[(String, String)],
    overrides: &RunOverrides,
) -> Result<SuiteReport, HarnessError> {
    let suite_root = overrides
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(crate::experiment::OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(format!("suite_{label}"));
    fs::create_dir_all(&suite_root)
        .map_err(|source| HarnessError::Io { path: suite_root.clone(), source })?;

    let results: Vec<ConfigResult> = batch::map(configs, |(name, text)| {
        run_one(name, text, &suite_root, overrides)
    });

    // Group per criterion prefix (text before the second '_', e.g. "c3").
    let mut criteria: Vec<CriterionResult> = Vec::new();
    for result in results {
        let id = result.name.split('_').next().unwrap_or(&result.name).to_string();
        match criteria.last_mut() {
            Some(c) if c.id == id => {
                c.pass &= result.pass;
                c.configs.push(result);
            }
            _ => criteria.push(CriterionResult { id, pass: result.pass, configs: vec![result] }),
        }
    }
    let all_pass = criteria.iter().all(|c| c.pass);

    let report_json = json!({
        "suite": label,
        "all_pass": all_pass,
        "criteria": criteria.iter().map(|c| json!({
            "id": c.id,
            "pass": c.pass,
            "configs": c.configs.iter().map(|r| json!({
                "name": r.name,
                "pass": r.pass,
                "detail": r.detail,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let report_path = suite_root.join("suite_report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report_json).unwrap() + "\n")
        .map_err(|source| HarnessError::Io { path: report_path.clone(), source })?;

    Ok(SuiteReport {
        suite: label.to_string(),
        criteria,
        all_pass,
        report_path: Some(report_path),
    })
}

fn run_one(name: &str, text: &str, suite_root: &Path, overrides: &RunOverrides) -> ConfigResult {
    let cfg: ExperimentConfig = match parse_config(text) {
        Ok(c) => c,
        Err(e) => {
            return ConfigResult {
                name: name.to_string(),
                pass: false,
                detail: format!("bundled config invalid: {e}"),
            }
        }
    };
    let per_run = RunOverrides {
        output_dir: Some(suite_root.to_path_buf()),
        seed: overrides.seed,
        tol: overrides.tol,
        quiet: overrides.quiet,
    };
    match run_experiment(&cfg, &per_run) {
        Ok(outcome) => {
            let detail = summarize(&outcome.summary);
            ConfigResult { name: name.to_string(), pass: outcome.passed, detail }
        }
        Err(e) => ConfigResult { name: name.to_string(), pass: false, detail: e.to_string() },
    }
}

/// One-line digest of an experiment summary for suite output.
fn summarize(summary: &Value) -> String {
    let mut parts = Vec::new();
    if let Some(analyses) = summary.get("analyses").and_then(Value::as_array) {
        for a in analyses {
            let op = a.get("op").and_then(Value::as_str).unwrap_or("?");
            let pass = a.get("pass").and_then(Value::as_bool).unwrap_or(false);
            let headline = a
                .get("details")
                .and_then(|d| {
                    d.get("deviation")
                        .or_else(|| d.get("max_deviation_observed"))
                        .or_else(|| d.get("max_violation"))
                        .or_else(|| d.get("min_margin"))
                        .or_else(|| d.get("relative_gap"))
                        .or_else(|| d.get("max_deviation"))
                        .or_else(|| d.get("residual"))
                })
                .and_then(Value::as_f64);
            match headline {
                Some(v) => parts.push(format!("{op}={} ({v:.3e})", if pass { "ok" } else { "FAIL" })),
                None => parts.push(format!("{op}={}", if pass { "ok" } else { "FAIL" })),
            }
        }
    }
    if let Some(failure) = summary.get("failure").filter(|f| !f.is_null()) {
        parts.push(format!("run failure: {failure}"));
    }
    if parts.is_empty() {
        "run only".to_string()
    } else {
        parts.join("; ")
    }
}
