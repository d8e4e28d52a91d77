//! Run settings: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use fastbev::augment::AugConfig;
use fastbev::bench::{BenchConfig, GridPreset, ReportFormat, ThreadMode};
use fastbev::scene::DEFAULT_FEATURE_STRIDE;
use serde::Deserialize;

use crate::error::CliError;

/// Flags shared by every subcommand. Each one overrides the same key in the
/// `--config` file.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML file with any of the keys below (flags win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Grid preset: 200x200x4, 200x200x6, 250x250x6, 300x300x6 or 400x400x12.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Feature channels C.
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    /// Frames fused per sample (1, 2 or 4).
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    /// Measured iterations.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Warmup iterations.
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    /// 1 = single-threaded; more shards the dense path over BEV rows.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Image pixels per feature cell.
    #[arg(long, global = true)]
    pub stride: Option<u32>,
    /// Camera calibration JSON; the bundled six-camera rig when absent.
    #[arg(long, global = true, value_name = "FILE")]
    pub calib: Option<PathBuf>,
    /// Output file; standard output for reports when absent.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Report format: table, csv or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    grid: Option<String>,
    channels: Option<usize>,
    frames: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    threads: Option<usize>,
    seed: Option<u64>,
    stride: Option<u32>,
    calib: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Option<String>,
    augment: Option<AugConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub grid: GridPreset,
    pub channels: usize,
    pub frames: usize,
    pub iters: usize,
    pub warmup: usize,
    pub threads: usize,
    pub seed: u64,
    pub stride: u32,
    pub calib: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub augment: AugConfig,
}

fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut file: FileConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    // paths inside the file are relative to the file
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut file.calib, &mut file.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}

impl Settings {
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let d = BenchConfig::default();
        let grid = flags.grid.clone().or(file.grid).map_or(Ok(d.grid), |s| s.parse())?;
        let format = flags
            .format
            .clone()
            .or(file.format)
            .map_or(Ok(ReportFormat::Table), |s| s.parse())?;
        let threads = flags.threads.or(file.threads).unwrap_or(1);
        if threads == 0 {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        let stride = flags.stride.or(file.stride).unwrap_or(DEFAULT_FEATURE_STRIDE);
        if stride == 0 {
            return Err(CliError::Config("stride must be >= 1".into()));
        }
        Ok(Self {
            grid,
            channels: flags.channels.or(file.channels).unwrap_or(d.channels),
            frames: flags.frames.or(file.frames).unwrap_or(d.frames),
            iters: flags.iters.or(file.iters).unwrap_or(d.iters),
            warmup: flags.warmup.or(file.warmup).unwrap_or(d.warmup),
            threads,
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            stride,
            calib: flags.calib.clone().or(file.calib),
            out: flags.out.clone().or(file.out),
            format,
            augment: file.augment.unwrap_or_default(),
        })
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            grid: self.grid,
            channels: self.channels,
            feature_stride: self.stride,
            frames: self.frames,
            warmup: self.warmup,
            iters: self.iters,
            threads: ThreadMode::from_threads(self.threads),
            seed: self.seed,
            calib: self.calib.clone(),
        }
    }
}
