//! Command-line experiment harness: single runs, one-axis sweeps, gradient
//! audits, the loss-gradient table check, and result comparison.
//!
//! Every command returns an exit code: 0 on success, 1 on a runtime failure
//! or a failed check, 2 on an invalid configuration.

pub mod commands;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{execute, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "cilforge",
    version,
    about = "Rehearsal-based class-incremental clip learning experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config selection shared by the experiment commands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// JSON run config; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override such as `replay.mode=finetune` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Top-level seed; replaces the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Key frames kept per stored exemplar (`memory.keyframes`).
    #[arg(long)]
    pub keyframes: Option<usize>,
    /// Motion-energy smoothing exponent in (0, 1] (`memory.gamma`).
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its result files.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default: config output_dir, else $CILFORGE_OUT/run-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a single config axis.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of replay.mode, input.delta, memory.multiplier, stream.tasks, model.hidden, replay.alpha.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare analytic gradients with finite differences for every loss mode.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of seeded configurations.
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Corrupt the analytic gradient (negative control).
        #[arg(long, value_enum, hide = true, default_value_t = FaultArg::None)]
        inject_fault: FaultArg,
    },
    /// Print the loss-gradient table and check it against the reference values.
    Table1 {
        /// Confidence-to-logit mapping (the alternative is a negative control).
        #[arg(long, value_enum, hide = true, default_value_t = ConventionArg::Affine)]
        convention: ConventionArg,
    },
    /// Metric deltas between two run directories (second minus first).
    Compare {
        first: PathBuf,
        second: PathBuf,
        /// Also write the deltas as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    None,
    FlipSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    /// `o = 2·conf − 1`.
    Affine,
    /// `o = conf`.
    Identity,
}
