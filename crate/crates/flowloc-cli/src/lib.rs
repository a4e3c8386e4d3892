//! Monte-Carlo experiment harness around the `flowloc` estimators:
//! configuration files, the run loop, and CSV persistence. The `flowloc`
//! binary is a thin command-line front end over these modules.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{load_config, parse_config, Algo, Config, ConfigError, Mode};
pub use output::write_outputs;
pub use runner::{run_experiment, ExperimentResult, RunRecord};
