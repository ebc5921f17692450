use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mirrorless_harness::config::{AnalysisConfig, ANALYSIS_OPS};
use mirrorless_harness::experiment::{run_experiment, RunOverrides};
use mirrorless_harness::suite::{run_suite, run_suite_from_dir, SuiteName};
use mirrorless_harness::parse_config_file;

/// Riemannian first-order optimization experiments: mirror descent, natural
/// gradient descent, and gradient flow as discretizations of one ODE.
#[derive(Parser)]
#[command(name = "mirrorless", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Output root (default: config `output`, then $MIRRORLESS_OUTPUT_DIR,
    /// then ./runs)
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the method ODE tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Suppress progress output
    #[arg(long)]
    quiet: bool,
}

impl CommonOpts {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            tol: self.tol,
            quiet: self.quiet,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: method run plus its analyses
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the Hessian-map symmetry check for the config's geometry
    CheckHessianMap {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the config's discretization-error sweep and write sweep.csv
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run a bundled suite (acceptance | quick) or a directory of configs
    Suite {
        name: String,
        /// Load configs from this directory instead of the bundled set
        #[arg(long)]
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// List built-in metrics, potentials, objectives, methods, charts, and
    /// analysis ops
    ListBuiltins,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = parse_config_file(&config)?;
            let outcome = run_experiment(&cfg, &common.overrides())?;
            if !common.quiet {
                println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
                println!(
                    "{}: {} (artifacts in {})",
                    outcome.name,
                    if outcome.passed { "PASS" } else { "FAIL" },
                    outcome.output_dir.display()
                );
            }
            Ok(outcome.passed)
        }
        Command::CheckHessianMap { config, common } => {
            let mut cfg = parse_config_file(&config)?;
            // Keep only the hessian_map_check analyses; add a default one if
            // the config has none. The method run is skipped.
            let mut checks: Vec<AnalysisConfig> = cfg
                .analyses
                .iter()
                .filter(|a| matches!(a, AnalysisConfig::HessianMapCheck { .. }))
                .cloned()
                .collect();
            if checks.is_empty() {
                checks.push(serde_json::from_value(serde_json::json!({
                    "op": "hessian_map_check"
                }))?);
            }
            cfg.analyses = checks;
            cfg.method = None;
            let outcome = run_experiment(&cfg, &common.overrides())?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary["analyses"])?);
            Ok(outcome.passed)
        }
        Command::Sweep { config, common } => {
            let mut cfg = parse_config_file(&config)?;
            let sweeps: Vec<AnalysisConfig> = cfg
                .analyses
                .iter()
                .filter(|a| matches!(a, AnalysisConfig::DiscretizationSweep { .. }))
                .cloned()
                .collect();
            if sweeps.is_empty() {
                return Err("config has no discretization_sweep analysis".into());
            }
            cfg.analyses = sweeps;
            cfg.method = None;
            let outcome = run_experiment(&cfg, &common.overrides())?;
            for report in outcome.summary["analyses"].as_array().into_iter().flatten() {
                if let Some(rows) = report["details"]["rows"].as_array() {
                    println!("eta,method,endpoint_error");
                    for row in rows {
                        println!(
                            "{},{},{}",
                            row["eta"], row["method"].as_str().unwrap_or("?"), row["endpoint_error"]
                        );
                    }
                }
            }
            if !common.quiet {
                println!("artifacts in {}", outcome.output_dir.display());
            }
            Ok(outcome.passed)
        }
        Command::Suite { name, dir, common } => {
            let overrides = common.overrides();
            let report = match dir {
                Some(dir) => run_suite_from_dir(&name, &dir, &overrides)?,
                None => {
                    let suite = SuiteName::parse(&name)
                        .ok_or_else(|| format!("unknown suite {name:?}; expected acceptance or quick"))?;
                    run_suite(suite, &overrides)?
                }
            };
            for criterion in &report.criteria {
                println!(
                    "{} criterion {}: {}",
                    if criterion.pass { "PASS" } else { "FAIL" },
                    criterion.id,
                    criterion
                        .configs
                        .iter()
                        .map(|c| format!("{} [{}]", c.name, if c.pass { "ok" } else { "FAIL" }))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                if !common.quiet {
                    for c in &criterion.configs {
                        println!("    {}: {}", c.name, c.detail);
                    }
                }
            }
            println!(
                "suite {}: {}",
                report.suite,
                if report.all_pass { "ALL PASS" } else { "FAILURES" }
            );
            if let Some(path) = &report.report_path {
                println!("report written to {}", path.display());
            }
            Ok(report.all_pass)
        }
        Command::ListBuiltins => {
            println!("metrics:");
            for m in mirrorless_core::geometry::BUILTIN_METRICS {
                println!("  {m}");
            }
            println!("potentials:");
            for p in mirrorless_core::potentials::BUILTIN_POTENTIALS {
                println!("  {p}");
            }
            println!("objectives:");
            for o in mirrorless_core::objectives::BUILTIN_OBJECTIVES {
                println!("  {o}");
            }
            println!("methods:");
            for m in mirrorless_core::optimizers::METHOD_NAMES {
                println!("  {m}");
            }
            println!("charts:");
            for c in mirrorless_core::analysis::BUILTIN_CHARTS {
                println!("  {c}");
            }
            println!("analysis ops:");
            for a in ANALYSIS_OPS {
                println!("  {a}");
            }
            Ok(true)
        }
    }
}
