//! `fastbev`: build projection tables, run the view transformation, fuse
//! frames and benchmark the table lookup against the recompute baseline.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::settings::{Flags, Settings};

#[derive(Debug, Parser)]
#[command(name = "fastbev", version, about)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the projection table for a rig and grid and write it to --out.
    BuildLut {
        /// Rewrite the calibration with one seeded image + BEV augmentation
        /// (ranges from the config file's [augment] table) before building.
        #[arg(long)]
        augment: bool,
    },
    /// Project camera features into a BEV tensor through a table.
    Project {
        #[arg(long, value_name = "FILE")]
        lut: PathBuf,
        /// Feature tensor (cameras, H_f, W_f, C); seeded random features when absent.
        #[arg(long, value_name = "FILE")]
        features: Option<PathBuf>,
    },
    /// Time the table lookup against the recompute-and-aggregate baseline.
    Bench,
    /// Align history BEV tensors to the first one and concatenate channels.
    Fuse {
        /// BEV tensor per frame, current frame first.
        #[arg(long = "bev", value_name = "FILE", required = true)]
        bevs: Vec<PathBuf>,
        /// Global ego pose `x,y,yaw` per frame, same order as --bev.
        #[arg(long = "pose", value_name = "X,Y,YAW", allow_hyphen_values = true)]
        poses: Vec<String>,
    },
    /// Print occupancy statistics of a table file.
    Stats {
        #[arg(long, value_name = "FILE")]
        lut: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = Settings::resolve(&cli.flags)?;
    match cli.command {
        Command::BuildLut { augment } => commands::build_lut_cmd(&s, augment),
        Command::Project { lut, features } => commands::project_cmd(&s, &lut, features.as_deref()),
        Command::Bench => commands::bench_cmd(&s),
        Command::Fuse { bevs, poses } => commands::fuse_cmd(&s, &bevs, &poses),
        Command::Stats { lut } => commands::stats_cmd(&s, &lut),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
