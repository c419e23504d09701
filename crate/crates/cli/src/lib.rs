//! Command-line driver for the spectral distillation framework: file
//! formats, configuration, the subcommands, and report rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use spectral_distill_core::pipeline::experiment::AblationRow;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "spectral-distill",
    version,
    about = "Cross-domain spectral distillation for soil salinity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON or key=value configuration; defaults to the desk preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed: world generation, split, adaptation unit, and teacher.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where results are written.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Where inputs are read from; defaults to the output directory.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired corpus.
    GenData {
        #[arg(long, value_enum, default_value = "csv")]
        format: io::Format,
    },
    /// Match laboratory samples to satellite sites.
    Pair,
    /// Spatial train/validation/test split of the sites.
    Split,
    /// Pretrain and align the spectral adaptation unit.
    TrainSau,
    /// Train the teacher on laboratory embeddings.
    TrainTeacher,
    /// Train one student.
    TrainStudent {
        #[arg(long, default_value = "hsi_ancillary_kd", value_parser = parse_row)]
        row: AblationRow,
        /// Student seed; defaults to the master seed.
        #[arg(long)]
        student_seed: Option<u64>,
    },
    /// Loss-coefficient grid search.
    Grid,
    /// Every ablation row over every configured seed.
    Ablate {
        /// Comma-separated subset of rows.
        #[arg(long, value_delimiter = ',', value_parser = parse_row)]
        rows: Vec<AblationRow>,
    },
    /// Aggregate completed runs into tables and plots.
    Report,
}

fn parse_row(s: &str) -> std::result::Result<AblationRow, String> {
    AblationRow::parse(s).map_err(|e| e.to_string())
}

/// Runs one parsed command line and returns its summary text.
pub fn run(cli: &Cli) -> Result<String> {
    let data_dir = cli.data_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
    if let Command::Report = cli.command {
        return commands::report_cmd(&data_dir, &cli.out_dir);
    }
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.world.seed = s;
    }
    let ctx = commands::Context {
        cfg,
        out_dir: cli.out_dir.clone(),
        data_dir,
    };
    match &cli.command {
        Command::GenData { format } => commands::gen_data(&ctx, *format),
        Command::Pair => commands::pair(&ctx),
        Command::Split => commands::split(&ctx),
        Command::TrainSau => commands::train_sau_cmd(&ctx),
        Command::TrainTeacher => commands::train_teacher_cmd(&ctx),
        Command::TrainStudent { row, student_seed } => {
            commands::train_student_cmd(&ctx, *row, *student_seed)
        }
        Command::Grid => commands::grid(&ctx),
        Command::Ablate { rows } => commands::ablate(&ctx, rows),
        Command::Report => unreachable!("handled above"),
    }
}

/// Parses `args`, runs the command, and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
