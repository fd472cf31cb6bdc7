//! Command-line driver: data preparation, two-stage training, evaluation,
//! Grad-CAM export and report rendering.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use commands::StageSelection;
use config::{FlagOverrides, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ferocc",
    version,
    about = "Expression recognition on upper-face-occluded images"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for manifests, checkpoints and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// vggface, vggf or toy.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build train/val/test manifests and class-count statistics.
    Prepare,
    /// Train on full faces, then fine-tune on lower-half faces.
    Train {
        #[arg(long, value_enum, default_value_t = StageArg::Both)]
        stage: StageArg,
    },
    /// Evaluate train/test occlusion cells and render the results table.
    Eval {
        /// Cells such as `full/lower`; defaults to the configured list.
        #[arg(long = "cell")]
        cells: Vec<String>,
    },
    /// Write a Grad-CAM panel for the given images.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Show the images without occluding their upper half.
        #[arg(long)]
        no_occlusion: bool,
        /// Panel path; defaults to `<out>/explain/panel.png`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Re-render the results table from existing evaluation reports.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Both,
    FullOnly,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let flags = FlagOverrides {
        seed: cli.seed,
        out: cli.out.clone(),
        preset: cli.preset.clone(),
    };
    let resolved = config.resolve(&flags)?;
    match cli.command {
        Command::Prepare => {
            let summary = commands::cmd_prepare(&resolved)?;
            for (name, counts) in &summary.manifests {
                println!("{name}: {} images", counts.iter().sum::<usize>());
            }
            if summary.ferplus_dropped > 0 {
                println!("FER+ rows dropped: {}", summary.ferplus_dropped);
            }
        }
        Command::Train { stage } => {
            let selection = match stage {
                StageArg::Both => StageSelection::Both,
                StageArg::FullOnly => StageSelection::FullOnly,
            };
            for p in commands::cmd_train(&resolved, selection)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval { cells } => {
            let cells = if cells.is_empty() {
                resolved.config.eval.cells.clone()
            } else {
                cells
            };
            commands::cmd_eval(&resolved, &cells)?;
            let text = std::fs::read_to_string(
                commands::Layout::new(&resolved.out_dir)
                    .eval_dir()
                    .join("results.txt"),
            )?;
            print!("{text}");
        }
        Command::Explain {
            checkpoint,
            no_occlusion,
            output,
            images,
        } => {
            let out = commands::cmd_explain(
                &resolved,
                &checkpoint,
                &images,
                !no_occlusion,
                output.as_deref(),
            )?;
            println!("wrote {}", out.display());
        }
        Command::Report => {
            let table = commands::cmd_report(&resolved)?;
            print!("{}", table.text);
        }
    }
    Ok(())
}
