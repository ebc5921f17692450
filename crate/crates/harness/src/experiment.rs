//! Experiment execution: build the configured geometry/objective, run the
//! method, execute analyses, and write artifacts (trajectory.csv,
//! summary.json, run_meta.json) into the experiment's output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use mirrorless_core::analysis::{
    bregman_projection, chart_transport_check, discretization_error_sweep, hessian_map_check,
    implicit_bias_closure, kkt_residual, make_builtin_chart, rate_bound_check, theorem1_check,
};
use mirrorless_core::geometry::{sample_domain_points, Point};
use mirrorless_core::objectives::{gradient_check, SampleStream};
use mirrorless_core::optimizers::{
    run_method, run_stochastic_md, run_two_scale_stochastic, scale_ratio, Geometry, Method,
    SampleMode, ScaleRatio,
};
use mirrorless_core::Trajectory;
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{
    build_geometry, build_objective, build_run_config, AnalysisConfig, BuiltObjectiveParts,
    ConfigError, ExperimentConfig,
};

pub const OUTPUT_DIR_ENV: &str = "MIRRORLESS_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub op: String,
    pub pass: bool,
    pub details: Value,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub name: String,
    pub passed: bool,
    pub output_dir: PathBuf,
    pub summary: Value,
}

/// Resolve the directory this experiment writes into:
/// `--output-dir` > config `output` > `$MIRRORLESS_OUTPUT_DIR` > `./runs`,
/// with the experiment name appended.
pub fn resolve_output_dir(cfg: &ExperimentConfig, overrides: &RunOverrides) -> PathBuf {
    let root = overrides
        .output_dir
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(&cfg.name)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    overrides: &RunOverrides,
) -> Result<ExperimentOutcome, HarnessError> {
    let start = Instant::now();
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let out_dir = resolve_output_dir(cfg, overrides);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let geometry = build_geometry(&cfg.geometry).map_err(HarnessError::Internal)?;
    let parts = match &cfg.objective {
        Some(oc) => {
            Some(build_objective(oc, cfg.base_dir.as_deref()).map_err(HarnessError::Internal)?)
        }
        None => None,
    };

    // Method run (optional) with trajectory artifact.
    let mut run_failure: Option<Value> = None;
    let trajectory: Option<Trajectory> = match (&cfg.method, &parts) {
        (Some(mc), Some(parts)) => {
            let run_cfg = build_run_config(mc, seed, overrides.tol);
            let result = if run_cfg.stochastic.is_some() {
                let psi = geometry.potential().cloned().ok_or_else(|| {
                    HarnessError::Internal("stochastic run needs a potential geometry".into())
                })?;
                let sobj = parts.stochastic.clone().ok_or_else(|| {
                    HarnessError::Internal("stochastic run needs a stochastic objective".into())
                })?;
                run_two_scale_stochastic(&run_cfg, &psi, sobj.as_ref())
            } else {
                run_method(&run_cfg, &geometry, parts.objective.as_ref())
            };
            match result {
                Ok(traj) => {
                    if let Some(f) = &traj.failure {
                        run_failure = Some(json!({
                            "iteration": f.iteration,
                            "time": f.time,
                            "message": f.message,
                        }));
                    }
                    let csv_path = out_dir.join("trajectory.csv");
                    write_trajectory_csv(&csv_path, &traj)?;
                    Some(traj)
                }
                Err(e) => {
                    run_failure = Some(json!({ "message": e.to_string() }));
                    None
                }
            }
        }
        _ => None,
    };

    // Analyses.
    let mut analyses = Vec::new();
    for ac in &cfg.analyses {
        let report = run_analysis(ac, cfg, &geometry, parts.as_ref(), trajectory.as_ref(), seed, &out_dir, overrides);
        analyses.push(match report {
            Ok(r) => r,
            Err(e) => AnalysisReport {
                op: ac.op_name().into(),
                pass: false,
                details: json!({ "error": e.to_string() }),
            },
        });
    }

    let passed = run_failure.is_none() && analyses.iter().all(|a| a.pass);
    let final_state = trajectory.as_ref().and_then(|t| {
        t.last_point().map(|p| {
            let k = t.len() - 1;
            json!({
                "iteration": k,
                "time": t.times[k],
                "point": p.to_vec(),
                "objective": t.meta[k].objective,
                "grad_norm": t.meta[k].grad_norm,
            })
        })
    });

    let summary = json!({
        "name": cfg.name,
        "seed": seed,
        "geometry": geometry.name(),
        "objective": parts.as_ref().map(|p| p.objective.name()),
        "method": cfg.method.as_ref().map(|m| m.method.as_str()),
        "final": final_state,
        "failure": run_failure,
        "analyses": analyses,
        "passed": passed,
    });
    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summary)?;

    let meta = json!({
        "name": cfg.name,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "config": serde_json::to_value(cfg).map_err(|e| HarnessError::Internal(e.to_string()))?,
    });
    write_json(&out_dir.join("run_meta.json"), &meta)?;

    Ok(ExperimentOutcome { name: cfg.name.clone(), passed, output_dir: out_dir, summary })
}

/// trajectory.csv columns: k, t, w_1..w_d, F, grad_norm, substeps. Floats use
/// the shortest round-trip representation so identical runs are
/// byte-identical.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::Io { path: path.to_path_buf(), source },
        other => HarnessError::Internal(format!("csv error: {other:?}")),
    })?;
    let d = traj.points.first().map_or(0, Point::dim);
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("w_{i}")));
    header.extend(["F".to_string(), "grad_norm".to_string(), "substeps".to_string()]);
    writer.write_record(&header).map_err(|e| HarnessError::Internal(e.to_string()))?;
    for k in 0..traj.len() {
        let mut record = vec![k.to_string(), format_float(traj.times[k])];
        record.extend(traj.points[k].coords().iter().map(|x| format_float(*x)));
        record.push(format_float(traj.meta[k].objective));
        record.push(format_float(traj.meta[k].grad_norm));
        record.push(traj.meta[k].substeps.to_string());
        writer.write_record(&record).map_err(|e| HarnessError::Internal(e.to_string()))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

fn format_float(x: f64) -> String {
    let mut buf = ryu_format(x);
    // csv/ryu prints integral floats as "1.0"; keep that (round-trip safe).
    if buf.is_empty() {
        buf = x.to_string();
    }
    buf
}

fn ryu_format(x: f64) -> String {
    // f64 Display in Rust is already shortest round-trip.
    format!("{x}")
}

fn write_json(path: &Path, value: &Value) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[allow(clippy::too_many_arguments)]
fn run_analysis(
    ac: &AnalysisConfig,
    cfg: &ExperimentConfig,
    geometry: &Geometry,
    parts: Option<&BuiltObjectiveParts>,
    trajectory: Option<&Trajectory>,
    seed: u64,
    out_dir: &Path,
    overrides: &RunOverrides,
) -> Result<AnalysisReport, HarnessError> {
    let op = ac.op_name().to_string();
    let objective = || -> Result<&Arc<dyn mirrorless_core::Objective>, HarnessError> {
        parts
            .map(|p| &p.objective)
            .ok_or_else(|| HarnessError::Internal(format!("{op} requires an objective")))
    };
    let potential = || {
        geometry
            .potential()
            .cloned()
            .ok_or_else(|| HarnessError::Internal(format!("{op} requires a potential geometry")))
    };
    let least_squares = || {
        parts
            .and_then(|p| p.least_squares.clone())
            .ok_or_else(|| HarnessError::Internal(format!("{op} requires a least-squares objective")))
    };

    match ac {
        AnalysisConfig::HessianMapCheck {
            points,
            num_points,
            fd_step,
            tol,
            expect_hessian_map,
            expect_witness_violation,
        } => {
            let metric = geometry.metric();
            let pts: Vec<DVector<f64>> = match points {
                Some(explicit) => explicit.iter().map(|p| DVector::from_column_slice(p)).collect(),
                None => sample_domain_points(metric.as_ref(), *num_points, seed),
            };
            let report = hessian_map_check(metric.as_ref(), &pts, *fd_step, *tol)
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
            let mut pass = true;
            if let Some(expected) = expect_hessian_map {
                pass &= report.is_hessian_map == *expected;
            }
            if let Some([lo, hi]) = expect_witness_violation {
                let v = report.witness.as_ref().map(|w| w.violation);
                pass &= v.is_some_and(|v| v >= *lo && v <= *hi);
            }
            Ok(AnalysisReport {
                op,
                pass,
                details: serde_json::to_value(&report)
                    .map_err(|e| HarnessError::Internal(e.to_string()))?,
            })
        }
        AnalysisConfig::Theorem1Check { eta, iterations, w_init, tol, max_deviation } => {
            let psi = potential()?;
            let obj = objective()?;
            let deviation = theorem1_check(
                &psi,
                obj.as_ref(),
                &Point::from_slice(w_init),
                *eta,
                *iterations,
                *tol,
            )
            .map_err(|e| HarnessError::Internal(e.to_string()))?;
            Ok(AnalysisReport {
                op,
                pass: deviation <= *max_deviation,
                details: json!({
                    "deviation": deviation,
                    "max_deviation": max_deviation,
                    "eta": eta,
                    "iterations": iterations,
                    "tol": tol,
                }),
            })
        }
        AnalysisConfig::RateBoundCheck { alpha, beta, iterations, w_init, ode_tol, min_margin } => {
            let obj = objective()?;
            let report = rate_bound_check(
                geometry.metric().clone(),
                obj.as_ref(),
                *alpha,
                *beta,
                &Point::from_slice(w_init),
                *iterations,
                *ode_tol,
                *min_margin,
            )
            .map_err(|e| HarnessError::Internal(e.to_string()))?;
            let pass = report.pass;
            Ok(AnalysisReport {
                op,
                pass,
                details: serde_json::to_value(&report)
                    .map_err(|e| HarnessError::Internal(e.to_string()))?,
            })
        }
        AnalysisConfig::GradientCheck { num_points, max_error } => {
            let obj = objective()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let worst = (0..*num_points)
                .map(|_| {
                    let w = DVector::from_fn(obj.dim(), |_, _| rng.random_range(-2.0..2.0));
                    gradient_check(obj.as_ref(), &w)
                })
                .fold(0.0f64, f64::max);
            Ok(AnalysisReport {
                op,
                pass: worst <= *max_error,
                details: json!({ "max_error_observed": worst, "max_error": max_error }),
            })
        }
        AnalysisConfig::BregmanProjection { w_init } => {
            let psi = potential()?;
            let lsq = least_squares()?;
            let proj = bregman_projection(
                psi.as_ref(),
                &Point::from_slice(w_init),
                lsq.design(),
                lsq.targets(),
            )
            .map_err(|e| HarnessError::Internal(e.to_string()))?;
            let feasibility = (lsq.design() * proj.coords() - lsq.targets()).norm();
            Ok(AnalysisReport {
                op,
                pass: true,
                details: json!({ "point": proj.to_vec(), "feasibility": feasibility }),
            })
        }
        AnalysisConfig::KktResidual { max_residual } => {
            let psi = potential()?;
            let lsq = least_squares()?;
            let traj = trajectory
                .ok_or_else(|| HarnessError::Internal("kkt_residual needs a trajectory".into()))?;
            let w0 = traj.points.first().unwrap();
            let w_final = traj.last_point().unwrap();
            let residual = kkt_residual(psi.as_ref(), w0, w_final, lsq.design())
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
            Ok(AnalysisReport {
                op,
                pass: residual <= *max_residual,
                details: json!({ "residual": residual, "max_residual": max_residual }),
            })
        }
        AnalysisConfig::ImplicitBiasCheck {
            w_init,
            objective_target,
            max_time,
            rel_tol,
            kkt_tol,
            ode_tol,
        } => {
            let psi = potential()?;
            let lsq = least_squares()?;
            let report = implicit_bias_closure(
                &psi,
                lsq.as_ref(),
                &Point::from_slice(w_init),
                *objective_target,
                *max_time,
                *ode_tol,
            )
            .map_err(|e| HarnessError::Internal(e.to_string()))?;
            let pass = report.final_objective <= *objective_target
                && report.relative_gap <= *rel_tol
                && report.kkt_residual <= *kkt_tol;
            Ok(AnalysisReport {
                op,
                pass,
                details: serde_json::to_value(&report)
                    .map_err(|e| HarnessError::Internal(e.to_string()))?,
            })
        }
        AnalysisConfig::ChartTransport {
            chart,
            method,
            eta,
            iterations,
            w_init,
            tol,
            max_deviation,
            halving_ratio,
        } => {
            let chart = make_builtin_chart(chart).map_err(|e| HarnessError::Internal(e.to_string()))?;
            let obj = objective()?.clone();
            let w0 = Point::from_slice(w_init);
            let run = |eta: f64, iters: usize| {
                chart_transport_check(
                    geometry.metric().clone(),
                    chart.clone(),
                    obj.clone(),
                    &w0,
                    *method,
                    eta,
                    iters,
                    *tol,
                )
            };
            let report = run(*eta, *iterations).map_err(|e| HarnessError::Internal(e.to_string()))?;
            let mut pass = true;
            let mut details = json!({
                "method": method.as_str(),
                "chart": chart.name(),
                "eta": eta,
                "max_deviation_observed": report.max_deviation,
            });
            if let Some(limit) = max_deviation {
                pass &= report.max_deviation <= *limit;
                details["max_deviation"] = json!(limit);
            }
            if let Some([lo, hi]) = halving_ratio {
                let halved = run(eta / 2.0, iterations * 2)
                    .map_err(|e| HarnessError::Internal(e.to_string()))?;
                let ratio = report.max_deviation / halved.max_deviation;
                pass &= ratio >= *lo && ratio <= *hi;
                details["halved_deviation"] = json!(halved.max_deviation);
                details["halving_ratio_observed"] = json!(ratio);
                details["halving_ratio"] = json!([lo, hi]);
            }
            Ok(AnalysisReport { op, pass, details })
        }
        AnalysisConfig::DiscretizationSweep { horizon, etas, w_init, reference_tol, ratio_range } => {
            let obj = objective()?;
            let rows = discretization_error_sweep(
                geometry,
                obj.as_ref(),
                &Point::from_slice(w_init),
                *horizon,
                etas,
                *reference_tol,
            )
            .map_err(|e| HarnessError::Internal(e.to_string()))?;
            // sweep.csv: eta, method, endpoint_error.
            let sweep_path = out_dir.join("sweep.csv");
            let mut writer = csv::Writer::from_path(&sweep_path)
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
            writer
                .write_record(["eta", "method", "endpoint_error"])
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
            for row in &rows {
                writer
                    .write_record([
                        format_float(row.eta),
                        row.method.clone(),
                        format_float(row.endpoint_error),
                    ])
                    .map_err(|e| HarnessError::Internal(e.to_string()))?;
            }
            writer.flush().map_err(io_err(&sweep_path))?;

            let mut pass = true;
            let mut ratios = serde_json::Map::new();
            if let Some([lo, hi]) = ratio_range {
                for method in ["ngd", "md_mirrorless"] {
                    let errs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.method == method)
                        .map(|r| r.endpoint_error)
                        .collect();
                    let rs: Vec<f64> = errs.windows(2).map(|p| p[0] / p[1]).collect();
                    pass &= rs.iter().all(|r| r >= lo && r <= hi);
                    ratios.insert(method.into(), json!(rs));
                }
            }
            Ok(AnalysisReport {
                op,
                pass,
                details: json!({
                    "rows": rows,
                    "ratios": Value::Object(ratios),
                    "ratio_range": ratio_range,
                    "csv": sweep_path.display().to_string(),
                }),
            })
        }
        AnalysisConfig::TwoScaleIdentity { batches, eta, iterations, w_init, tol } => {
            let psi = potential()?;
            let sobj = parts
                .and_then(|p| p.stochastic.clone())
                .ok_or_else(|| HarnessError::Internal("two_scale_identity requires a stochastic objective".into()))?;
            let w0 = Point::from_slice(w_init);
            let mut worst = 0.0f64;
            let mut per_batch = serde_json::Map::new();
            for &b in batches {
                let nu = eta / b as f64;
                debug_assert!(matches!(scale_ratio(*eta, nu), Some(ScaleRatio::Minibatch(_))));
                let mut run_cfg = mirrorless_core::RunConfig::new(
                    Method::MdClassic,
                    *eta,
                    *iterations,
                    w0.clone(),
                );
                run_cfg.stochastic = Some(mirrorless_core::optimizers::TwoScaleConfig {
                    nu,
                    samples: SampleMode::Stream(SampleStream::Seeded { seed }),
                });
                let two = run_two_scale_stochastic(&run_cfg, &psi, sobj.as_ref())
                    .map_err(|e| HarnessError::Internal(e.to_string()))?;
                let reference = run_stochastic_md(
                    &psi,
                    sobj.as_ref(),
                    &w0,
                    *eta,
                    *iterations,
                    b,
                    &SampleMode::Stream(SampleStream::Seeded { seed }),
                )
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
                if !(two.succeeded() && reference.succeeded()) {
                    return Ok(AnalysisReport {
                        op,
                        pass: false,
                        details: json!({ "error": "a stochastic run failed", "batch": b }),
                    });
                }
                let dev = (0..two.len())
                    .map(|k| {
                        (two.points[k].coords() - reference.points[k].coords()).abs().max()
                    })
                    .fold(0.0f64, f64::max);
                worst = worst.max(dev);
                per_batch.insert(b.to_string(), json!(dev));
            }
            Ok(AnalysisReport {
                op,
                pass: worst <= *tol,
                details: json!({ "max_deviation": worst, "tol": tol, "per_batch": per_batch }),
            })
        }
        AnalysisConfig::EndpointCheck { expected, tol } => {
            let traj = trajectory
                .ok_or_else(|| HarnessError::Internal("endpoint_check needs a trajectory".into()))?;
            if traj.failure.is_some() {
                return Ok(AnalysisReport {
                    op,
                    pass: false,
                    details: json!({ "error": "run failed before the endpoint" }),
                });
            }
            let end = traj.last_point().unwrap();
            if end.dim() != expected.len() {
                return Err(HarnessError::Internal("expected endpoint has wrong dimension".into()));
            }
            let dev = end
                .coords()
                .iter()
                .zip(expected)
                .map(|(a, e)| (a - e).abs())
                .fold(0.0f64, f64::max);
            Ok(AnalysisReport {
                op,
                pass: dev <= *tol,
                details: json!({ "deviation": dev, "tol": tol, "endpoint": end.to_vec() }),
            })
        }
        AnalysisConfig::Reproducibility {} => {
            let mc = cfg
                .method
                .as_ref()
                .ok_or_else(|| HarnessError::Internal("reproducibility needs a method".into()))?;
            let parts = parts
                .ok_or_else(|| HarnessError::Internal("reproducibility needs an objective".into()))?;
            let mut bytes = Vec::new();
            for rep in ["rep_a", "rep_b"] {
                let run_cfg = build_run_config(mc, seed, overrides.tol);
                let traj = if run_cfg.stochastic.is_some() {
                    let psi = geometry.potential().cloned().ok_or_else(|| {
                        HarnessError::Internal("stochastic run needs a potential geometry".into())
                    })?;
                    let sobj = parts.stochastic.clone().ok_or_else(|| {
                        HarnessError::Internal("stochastic run needs a stochastic objective".into())
                    })?;
                    run_two_scale_stochastic(&run_cfg, &psi, sobj.as_ref())
                } else {
                    run_method(&run_cfg, geometry, parts.objective.as_ref())
                }
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
                let dir = out_dir.join(rep);
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let path = dir.join("trajectory.csv");
                write_trajectory_csv(&path, &traj)?;
                bytes.push(fs::read(&path).map_err(io_err(&path))?);
            }
            let identical = bytes[0] == bytes[1];
            Ok(AnalysisReport {
                op,
                pass: identical,
                details: json!({ "identical": identical, "bytes": bytes[0].len() }),
            })
        }
    }
}
