use std::time::Duration;

use duffing::params::SystemParams;
use duffing::propagate::Model;
use serde::Serialize;

/// Everything needed to rerun a command exactly.
#[derive(Serialize, Debug)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: SystemParams,
    /// The configuration in the input file format.
    pub config_text: String,
    pub model: Model,
    pub threads: usize,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        params: &SystemParams,
        model: Model,
        threads: usize,
        outputs: Vec<String>,
        elapsed: Duration,
    ) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config: params.clone(),
            config_text: params.to_config_string(),
            model,
            threads,
            outputs,
            wall_clock_seconds: elapsed.as_secs_f64(),
            version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        }
    }
}
