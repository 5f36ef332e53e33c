//! `duffing`: spectra, bifurcation analysis, master-equation runs, Wigner
//! functions and tunneling-rate scaling for the driven Duffing oscillator.

mod commands;
mod manifest;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use duffing::propagate::Model;

#[derive(Parser, Debug)]
#[command(name = "duffing", version, about = "Open quantum dynamics of a mesoscopic driven Duffing oscillator")]
pub struct Cli {
    /// Flat `key = value` parameter file; absent keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for independent runs (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Drop the e^{+-2i nu t} terms of the dissipator.
    #[arg(long, global = true)]
    pub no_counter_rotating: bool,
    /// Use the Lindblad dissipator instead of the filtered Redfield one.
    #[arg(long, global = true)]
    pub lindblad: bool,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn model(&self) -> Model {
        if self.lindblad {
            Model::Lindblad
        } else {
            Model::Redfield {
                counter_rotating: !self.no_counter_rotating,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitState {
    Sas,
    Las,
    Vacuum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepInit {
    Sas,
    Las,
    Both,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rotating-frame quasienergies with their adiabatic Fock labels.
    Spectrum {
        /// Drive in units of F_c (default: config drive_ratio).
        #[arg(long)]
        drive: Option<f64>,
    },
    /// Classical and quantum-shifted bifurcation diagrams and fold drives.
    Bifurcation {
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 1.2)]
        to: f64,
        #[arg(long, default_value_t = 241)]
        points: usize,
    },
    /// Integrate the master equation and record x_bar(t) and P_S(t).
    Evolve {
        #[arg(long)]
        drive: Option<f64>,
        #[arg(long, value_enum, default_value_t = InitState::Sas)]
        init: InitState,
        /// Integrator steps between recorded samples.
        #[arg(long, default_value_t = duffing::propagate::DEFAULT_RECORD_STRIDE)]
        stride: usize,
    },
    /// Steady amplitude at t_final over a drive grid from either attractor.
    Sweep {
        #[arg(long, default_value_t = 0.5)]
        from: f64,
        #[arg(long, default_value_t = 1.1)]
        to: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long, value_enum, default_value_t = SweepInit::Both)]
        init: SweepInit,
    },
    /// Wigner functions of the evolving state at chosen times.
    Wigner {
        #[arg(long)]
        drive: Option<f64>,
        /// Snapshot times in periods.
        #[arg(long, value_delimiter = ',', default_value = "40,160")]
        at: Vec<f64>,
        #[arg(long, value_enum, default_value_t = InitState::Sas)]
        init: InitState,
        /// Half-width of the square quadrature grid.
        #[arg(long, default_value_t = 8.0)]
        half_width: f64,
        #[arg(long, default_value_t = 201)]
        grid_points: usize,
    },
    /// Escape rate from the small-amplitude attractor at one drive.
    Rate {
        #[arg(long)]
        drive: Option<f64>,
        #[arg(long, default_value_t = 20.0)]
        t_transient: f64,
    },
    /// Escape rates over a drive grid and the fit of their scaling.
    Scaling {
        /// Drives in units of F_c, all below the shifted bifurcation point.
        #[arg(long, value_delimiter = ',', default_value = "0.70,0.71,0.72,0.73,0.74,0.75,0.76,0.765")]
        drives: Vec<f64>,
        #[arg(long, default_value_t = 20.0)]
        t_transient: f64,
    },
    /// Quick numerical property checks.
    Selftest,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("DUFFING_LOG_LEVEL", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
