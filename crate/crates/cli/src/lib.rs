//! Command-line driver: runs the synthetic closed loop, fits landscapes,
//! computes trajectory statistics and exposes the G-code tools.
//!
//! [`run`] is the whole program; `main` only forwards the process arguments
//! and exit code.

pub mod commands;
pub mod config;
pub mod docsdata;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dropevo_core::fitness::Objective;

pub use config::Config;
pub use error::{CliError, CliResult, Exit};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "dropevo", version, about = "Evolutionary search over four-oil droplet formulations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON config (or a run manifest to repeat a run).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `ga.rng_seed` and `arena.rng_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Behavior to optimize or score.
    #[arg(long, global = true, value_parser = parse_objective)]
    pub objective: Option<Objective>,
    /// Kernel bandwidth for `landscape`.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Ridge penalty for `landscape`.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Worker threads for evaluation and lattice filling.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the GA over the simulated platform and write the history.
    Evolve,
    /// Fit the kernel model to histories and write face lattices and islands.
    Landscape {
        #[arg(required = true)]
        history: Vec<PathBuf>,
        /// Lattice points per face edge.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Trajectory statistics for one or more histories.
    Analyze {
        #[arg(required = true)]
        history: Vec<PathBuf>,
        /// Also train a self-organizing map on the recipes.
        #[arg(long)]
        som: bool,
        /// CSV `history,run,individual_id,label` naming recipes for the SOM.
        #[arg(long, requires = "som")]
        labels: Option<PathBuf>,
    },
    /// Compile, check and execute robot programs.
    Gcode {
        #[command(subcommand)]
        command: GcodeCommand,
    },
    /// Simulate one experiment and write its detections.
    Simulate {
        /// Four comma-separated proportions (normalized).
        #[arg(long)]
        recipe: String,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Track a detection file and score it.
    Track { detections: PathBuf },
    /// Check files against a documented format.
    Validate {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(docsdata::FORMATS))]
        format: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GcodeCommand {
    /// Compile a recipe experiment or a JSON list of lab operations.
    Compile {
        /// Four comma-separated proportions (normalized).
        #[arg(long, conflicts_with = "ops", required_unless_present = "ops")]
        recipe: Option<String>,
        /// JSON list of lab operations.
        #[arg(long)]
        ops: Option<PathBuf>,
        /// Well receiving the recipe (0-based).
        #[arg(long, default_value_t = 0)]
        well: usize,
        /// Experiments from the well, each after a cleaning cycle.
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Append a cleaning cycle.
        #[arg(long)]
        cleaning: bool,
        /// Stage layout JSON; the shipped layout when absent.
        #[arg(long)]
        layout: Option<PathBuf>,
    },
    /// Parse programs and report positioned errors as JSON.
    Parse {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Execute programs in order on the virtual machine and print the final state.
    Exec {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Stage layout JSON; the shipped layout when absent.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Initial state JSON; a fresh machine when absent.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Aqueous phase already in the dish, mL.
        #[arg(long, default_value_t = 0.0)]
        dish_aqueous_ml: f64,
    },
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    Exit::Success.code()
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    Exit::Usage.code()
                }
            };
        }
    };
    let words: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli, words, stdout) {
        Ok(()) => Exit::Success.code(),
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit.code()
        }
    }
}
