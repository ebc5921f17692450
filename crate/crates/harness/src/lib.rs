//! Config-driven experiment harness for the mirrorless optimization
//! toolkit: JSON experiment configs in, CSV trajectories and JSON summaries
//! out, plus the bundled acceptance and quick suites.

pub mod config;
pub mod experiment;
pub mod suite;

pub use config::{parse_config, parse_config_file, validate, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOutcome, HarnessError, RunOverrides};
pub use suite::{run_suite, run_suite_from_configs, run_suite_from_dir, SuiteName, SuiteReport};
