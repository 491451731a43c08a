//! `mecs`: config-driven experiments for accelerated multi-echo MRI.
//!
//! Every command reads one TOML experiment config (or the defaults),
//! applies `--set key=value` overrides, writes the resolved config next to
//! its artifacts and exits with 0 on success, 1 on config or validation
//! errors, 2 on usage errors and 3 on numeric failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mecs_core::experiment::ExperimentConfig;
use mecs_core::Error;

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mecs",
    version,
    about = "Learned sampling and unrolled reconstruction for multi-echo MRI"
)]
pub struct Cli {
    #[command(subcommand)]
    pub top: Top,
}

#[derive(Debug, Subcommand)]
pub enum Top {
    /// Run one experiment command.
    Run(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory; shorthand for `--set output_dir=...`.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the phantom: truth, k-space, coil maps and tissue maps.
    Phantom,
    /// Build the probabilistic pattern and draw a binary mask.
    Pattern {
        /// Learned pattern logits `[echoes, ny, nz]` (METF).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Order a mask's samples into an acquisition schedule.
    Schedule {
        /// Binary mask `[echoes, ny, nz]` (METF); drawn from the config when omitted.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Train pattern and denoiser (phase 1), then fine-tune (phase 2).
    Train,
    /// Reconstruct one dataset.
    Recon {
        /// Fully sampled or zero-filled k-space `[echoes, coils, ny, nz]` (METF).
        #[arg(long, requires = "coils")]
        kspace: Option<PathBuf>,
        /// Coil maps `[coils, ny, nz]` (METF).
        #[arg(long, requires = "kspace")]
        coils: Option<PathBuf>,
        /// Binary mask `[echoes, ny, nz]` (METF).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Quantitative maps and image metrics of a reconstruction.
    Eval {
        /// Complex multi-echo image `[echoes, ny, nz]` (METF).
        #[arg(long)]
        input: PathBuf,
        /// Reference image, same layout.
        #[arg(long)]
        reference: PathBuf,
        /// Fits are valid where the magnitude exceeds this fraction of its maximum.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Train and test every fusion-by-pattern cell over all seeds.
    Ablate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Pattern { .. } => "pattern",
            Command::Schedule { .. } => "schedule",
            Command::Train => "train",
            Command::Recon { .. } => "recon",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
        }
    }
}

/// Maps a core error to its exit status.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let Top::Run(run) = cli.top;
    match execute(&run) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Resolves the config for `run` and executes its command.
pub fn execute(run: &RunArgs) -> mecs_core::Result<()> {
    let mut overrides = run.set.clone();
    if let Some(o) = &run.output {
        overrides.push(format!("output_dir={}", toml_string(&o.to_string_lossy())));
    }
    let cfg = ExperimentConfig::load(run.config.as_deref(), &overrides)?;
    commands::run(&run.command, &cfg)
}

fn toml_string(s: &str) -> String {
    let escaped: String = s
        .chars()
        .flat_map(|c| match c {
            '"' => vec!['\\', '"'],
            '\\' => vec!['\\', '\\'],
            c => vec![c],
        })
        .collect();
    format!("\"{escaped}\"")
}
