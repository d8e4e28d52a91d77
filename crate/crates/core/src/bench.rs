//! Latency harness for the two projection paths.
//!
//! Every run first checks that the LUT path and the recompute baseline agree
//! bit for bit on the generated input, then times both. LUT construction is
//! timed separately and never counted as per-frame latency. Both paths write
//! into output buffers allocated once before timing, so the numbers measure
//! the projection work rather than page faults on fresh allocations; the
//! baseline still clears and refills its per-camera volumes on every call.

use std::fmt::Write as _;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{CameraCalibration, EgoPose, GeometryError, VoxelGridSpec};
use crate::lut::{build_lut, lut_stats, LutBuildConfig, LutError};
use crate::projection::{
    aggregate, aggregate_into, project_dense, project_dense_into, project_dense_sharded, project_dense_sharded_into,
    project_sparse_baseline, project_sparse_baseline_into, BevTensor, FeatureMapSet, ProjectionError,
};
use crate::scene::{load_nuscenes_calibration, make_nuscenes_like_rig, CalibError, DEFAULT_FEATURE_STRIDE};
use crate::temporal::{fuse_frames, FrameBundle, TemporalError};

/// Keyframe spacing of the synthetic trajectory used for fusion timing.
pub const KEYFRAME_INTERVAL_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("equivalence check failed: {0}")]
    Equivalence(Mismatch),
    #[error("io: {0}")]
    Io(String),
}

/// First differing element between two BEV tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub voxel: [usize; 3],
    pub channel: usize,
    pub dense: f32,
    pub baseline: f32,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "voxel {:?} channel {}: dense {} vs baseline {}",
            self.voxel, self.channel, self.dense, self.baseline
        )
    }
}

/// Bitwise comparison; shape differences report voxel `[0,0,0]`.
pub fn first_mismatch(dense: &BevTensor, baseline: &BevTensor) -> Option<Mismatch> {
    if dense.dims() != baseline.dims() || dense.channels() != baseline.channels() {
        return Some(Mismatch {
            voxel: [0; 3],
            channel: 0,
            dense: f32::NAN,
            baseline: f32::NAN,
        });
    }
    let [_, ny, nz] = dense.dims();
    let c = dense.channels();
    dense
        .data()
        .iter()
        .zip(baseline.data())
        .position(|(a, b)| a.to_bits() != b.to_bits())
        .map(|idx| {
            let v = idx / c;
            Mismatch {
                voxel: [v / (ny * nz), (v / nz) % ny, v % nz],
                channel: idx % c,
                dense: dense.data()[idx],
                baseline: baseline.data()[idx],
            }
        })
}

/// BEV grid resolutions used by the serial model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridPreset {
    #[serde(rename = "200x200x4")]
    G200x200x4,
    #[serde(rename = "200x200x6")]
    G200x200x6,
    #[serde(rename = "250x250x6")]
    G250x250x6,
    #[serde(rename = "300x300x6")]
    G300x300x6,
    #[serde(rename = "400x400x12")]
    G400x400x12,
}

impl GridPreset {
    pub const ALL: [GridPreset; 5] = [
        GridPreset::G200x200x4,
        GridPreset::G200x200x6,
        GridPreset::G250x250x6,
        GridPreset::G300x300x6,
        GridPreset::G400x400x12,
    ];

    pub fn dims(self) -> [usize; 3] {
        match self {
            GridPreset::G200x200x4 => [200, 200, 4],
            GridPreset::G200x200x6 => [200, 200, 6],
            GridPreset::G250x250x6 => [250, 250, 6],
            GridPreset::G300x300x6 => [300, 300, 6],
            GridPreset::G400x400x12 => [400, 400, 12],
        }
    }

    /// Every preset spans x, y ∈ [−50, 50] m and z ∈ [−3, 5] m around the ego
    /// origin; only the resolution changes.
    pub fn grid(self) -> VoxelGridSpec {
        VoxelGridSpec::from_range([-50.0, -50.0, -3.0], [50.0, 50.0, 5.0], self.dims()).expect("preset grid")
    }

    pub fn name(self) -> String {
        let [x, y, z] = self.dims();
        format!("{x}x{y}x{z}")
    }
}

impl FromStr for GridPreset {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('×', "x");
        GridPreset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| {
                BenchError::Config(format!(
                    "unknown grid preset `{s}` (expected one of 200x200x4, 200x200x6, 250x250x6, 300x300x6, 400x400x12)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThreadMode {
    Single,
    Sharded(usize),
}

impl ThreadMode {
    pub fn from_threads(threads: usize) -> Self {
        if threads <= 1 {
            ThreadMode::Single
        } else {
            ThreadMode::Sharded(threads)
        }
    }

    pub fn describe(self) -> String {
        match self {
            ThreadMode::Single => "single".into(),
            ThreadMode::Sharded(n) => format!("sharded({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub grid: GridPreset,
    pub channels: usize,
    pub feature_stride: u32,
    /// 1, 2 or 4.
    pub frames: usize,
    pub warmup: usize,
    pub iters: usize,
    pub threads: ThreadMode,
    pub seed: u64,
    /// Calibration file; the bundled six-camera rig when absent.
    pub calib: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            grid: GridPreset::G200x200x4,
            channels: 64,
            feature_stride: DEFAULT_FEATURE_STRIDE,
            frames: 1,
            warmup: 2,
            iters: 10,
            threads: ThreadMode::Single,
            seed: 0,
            calib: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.iters == 0 {
            return Err(BenchError::Config("iterations must be >= 1".into()));
        }
        if ![1, 2, 4].contains(&self.frames) {
            return Err(BenchError::Config(format!("frames must be 1, 2 or 4, got {}", self.frames)));
        }
        if self.channels == 0 {
            return Err(BenchError::Config("channels must be >= 1".into()));
        }
        if self.threads == ThreadMode::Sharded(0) {
            return Err(BenchError::Config("thread count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load_rig(&self) -> Result<Vec<CameraCalibration>, BenchError> {
        Ok(match &self.calib {
            Some(path) => load_nuscenes_calibration(path)?,
            None => make_nuscenes_like_rig("six_cam_default").expect("bundled preset"),
        })
    }
}

/// Latency summary in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_durations(samples: &[Duration]) -> Self {
        assert!(!samples.is_empty(), "at least one sample");
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        let p95_rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            samples: n,
            min_ms: ms[0],
            median_ms: median,
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            p95_ms: if n == 1 { median } else { ms[p95_rank - 1] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySummary {
    pub valid_fraction: f64,
    /// Share of all voxels each camera claims in the table.
    pub per_camera_claim: Vec<f64>,
    /// Share of all voxels each camera sees (baseline mask density).
    pub per_camera_visibility: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub thread_mode: String,
    pub available_parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: String,
    pub voxels: usize,
    pub channels: usize,
    pub num_cameras: usize,
    pub feature_dims: [usize; 2],
    pub frames: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
    pub input_checksum: String,
    pub equivalence_checked: bool,
    pub baseline: LatencyStats,
    pub dense: LatencyStats,
    pub dense_sharded: Option<LatencyStats>,
    pub fusion: Option<LatencyStats>,
    pub speedup: f64,
    pub lut_build_ms: f64,
    pub lut_size_bytes: usize,
    pub occupancy: OccupancySummary,
    pub environment: Environment,
    pub warnings: Vec<String>,
}

/// Uniform `[-1, 1)` features from a seeded generator.
pub fn random_features(seed: u64, num_cameras: usize, h: usize, w: usize, c: usize) -> FeatureMapSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..num_cameras * h * w * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    FeatureMapSet::new(num_cameras, h, w, c, data).expect("sized buffer")
}

/// SHA-256 over the little-endian payload, first 16 hex digits.
pub fn checksum(data: &[f32]) -> String {
    let mut hasher = Sha256::new();
    for x in data {
        hasher.update(x.to_le_bytes());
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Smallest observable non-zero step of the monotonic clock.
fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn time_iters<T>(warmup: usize, iters: usize, mut f: impl FnMut() -> T) -> Vec<Duration> {
    for _ in 0..warmup {
        black_box(f());
    }
    (0..iters)
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed()
        })
        .collect()
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let rig = cfg.load_rig()?;
    let grid = cfg.grid.grid();
    let lut_cfg = LutBuildConfig::for_rig(&rig, cfg.feature_stride);
    let mut warnings = Vec::new();

    let t = Instant::now();
    let lut = build_lut(&rig, &grid, &lut_cfg)?;
    let lut_build_ms = t.elapsed().as_secs_f64() * 1e3;
    let (h, w) = lut.feature_dims();
    let feats = random_features(cfg.seed, rig.len(), h, w, cfg.channels);
    let input_checksum = checksum(feats.data());

    let pool = match cfg.threads {
        ThreadMode::Single => None,
        ThreadMode::Sharded(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| BenchError::Config(e.to_string()))?,
        ),
    };

    // correctness gate before any timing; the gate's tensors then serve as
    // the reused output buffers of the timed runs
    let mut dense = project_dense(&lut, &feats)?;
    let mut sparse = project_sparse_baseline(&rig, &grid, &lut_cfg, &feats)?;
    let mut merged = aggregate(&sparse, &lut_cfg.camera_priority)?;
    if let Some(m) = first_mismatch(&dense, &merged) {
        return Err(BenchError::Equivalence(m));
    }
    let mut sharded = match &pool {
        Some(pool) => {
            let sharded = pool.install(|| project_dense_sharded(&lut, &feats))?;
            if let Some(m) = first_mismatch(&sharded, &dense) {
                return Err(BenchError::Equivalence(m));
            }
            Some(sharded)
        }
        None => None,
    };
    let stats = lut_stats(&lut);
    let occupancy = OccupancySummary {
        valid_fraction: stats.valid_fraction,
        per_camera_claim: stats.camera_fractions(),
        per_camera_visibility: (0..sparse.num_cameras()).map(|c| sparse.mask_density(c)).collect(),
    };

    let baseline_t = time_iters(cfg.warmup, cfg.iters, || {
        project_sparse_baseline_into(&rig, &grid, &lut_cfg, &feats, &mut sparse).expect("validated");
        aggregate_into(&sparse, &lut_cfg.camera_priority, &mut merged).expect("validated");
    });
    let dense_t = time_iters(cfg.warmup, cfg.iters, || {
        project_dense_into(&lut, &feats, &mut dense).expect("validated")
    });
    let dense_sharded = pool.as_ref().zip(sharded.as_mut()).map(|(pool, out)| {
        LatencyStats::from_durations(&time_iters(cfg.warmup, cfg.iters, || {
            pool.install(|| project_dense_sharded_into(&lut, &feats, out)).expect("validated")
        }))
    });
    drop((dense, sparse, merged, sharded));

    let fusion = if cfg.frames > 1 {
        let bundles: Vec<FrameBundle> = (0..cfg.frames)
            .map(|f| {
                let frame_feats = random_features(cfg.seed.wrapping_add(f as u64), rig.len(), h, w, cfg.channels);
                let t = -(f as f64) * KEYFRAME_INTERVAL_S;
                Ok(FrameBundle {
                    bev: project_dense(&lut, &frame_feats)?,
                    pose: EgoPose::planar(10.0 * t, 0.0, 0.02 * t, t),
                    frame_offset: f as u32,
                })
            })
            .collect::<Result<_, BenchError>>()?;
        let samples = time_iters(cfg.warmup, cfg.iters, || fuse_frames(&bundles, 0, &grid).expect("validated"));
        Some(LatencyStats::from_durations(&samples))
    } else {
        None
    };

    let resolution = timer_resolution();
    if resolution > Duration::from_micros(1) {
        warnings.push(format!("timer resolution {resolution:?} is coarser than 1 µs"));
    }

    let baseline = LatencyStats::from_durations(&baseline_t);
    let dense = LatencyStats::from_durations(&dense_t);
    Ok(BenchReport {
        grid: cfg.grid.name(),
        voxels: grid.num_voxels(),
        channels: cfg.channels,
        num_cameras: rig.len(),
        feature_dims: [h, w],
        frames: cfg.frames,
        warmup: cfg.warmup,
        iters: cfg.iters,
        seed: cfg.seed,
        input_checksum,
        equivalence_checked: true,
        speedup: baseline.median_ms / dense.median_ms,
        baseline,
        dense,
        dense_sharded,
        fusion,
        lut_build_ms,
        lut_size_bytes: lut.size_bytes(),
        occupancy,
        environment: Environment {
            cpu_model: cpu_model(),
            thread_mode: cfg.threads.describe(),
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(BenchError::Config(format!("unknown format `{other}` (table, csv, json)"))),
        }
    }
}

/// Column order of the CSV report. List-valued fields are `;`-joined.
pub const CSV_COLUMNS: [&str; 24] = [
    "grid",
    "voxels",
    "channels",
    "num_cameras",
    "frames",
    "iters",
    "seed",
    "thread_mode",
    "baseline_min_ms",
    "baseline_median_ms",
    "baseline_mean_ms",
    "baseline_p95_ms",
    "dense_min_ms",
    "dense_median_ms",
    "dense_mean_ms",
    "dense_p95_ms",
    "dense_sharded_median_ms",
    "fusion_median_ms",
    "speedup",
    "lut_build_ms",
    "lut_size_bytes",
    "valid_fraction",
    "per_camera_claim",
    "per_camera_visibility",
];

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
}

fn opt_median(s: &Option<LatencyStats>) -> String {
    s.as_ref().map(|s| format!("{:.6}", s.median_ms)).unwrap_or_default()
}

pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => {
            let r = report;
            let row = [
                r.grid.clone(),
                r.voxels.to_string(),
                r.channels.to_string(),
                r.num_cameras.to_string(),
                r.frames.to_string(),
                r.iters.to_string(),
                r.seed.to_string(),
                r.environment.thread_mode.clone(),
                format!("{:.6}", r.baseline.min_ms),
                format!("{:.6}", r.baseline.median_ms),
                format!("{:.6}", r.baseline.mean_ms),
                format!("{:.6}", r.baseline.p95_ms),
                format!("{:.6}", r.dense.min_ms),
                format!("{:.6}", r.dense.median_ms),
                format!("{:.6}", r.dense.mean_ms),
                format!("{:.6}", r.dense.p95_ms),
                opt_median(&r.dense_sharded),
                opt_median(&r.fusion),
                format!("{:.6}", r.speedup),
                format!("{:.6}", r.lut_build_ms),
                r.lut_size_bytes.to_string(),
                format!("{:.6}", r.occupancy.valid_fraction),
                join(&r.occupancy.per_camera_claim),
                join(&r.occupancy.per_camera_visibility),
            ];
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).expect("in-memory write");
            w.write_record(&row).expect("in-memory write");
            String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
        }
        ReportFormat::Table => render_table(report),
    }
}

fn render_table(r: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "view transformation latency | grid {} ({} voxels) | C={} | {} cameras, features {}x{} | {}",
        r.grid, r.voxels, r.channels, r.num_cameras, r.feature_dims[0], r.feature_dims[1], r.environment.thread_mode
    );
    let _ = writeln!(s, "cpu: {}", r.environment.cpu_model);
    let _ = writeln!(
        s,
        "{:<26} {:>10} {:>10} {:>10} {:>10}",
        "path", "min ms", "median ms", "mean ms", "p95 ms"
    );
    let mut row = |name: &str, l: &LatencyStats| {
        let _ = writeln!(
            s,
            "{:<26} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            name, l.min_ms, l.median_ms, l.mean_ms, l.p95_ms
        );
    };
    row("sparse baseline + agg", &r.baseline);
    row("dense LUT gather", &r.dense);
    if let Some(l) = &r.dense_sharded {
        row("dense LUT gather (sharded)", l);
    }
    if let Some(l) = &r.fusion {
        row(&format!("temporal fusion (F={})", r.frames), l);
    }
    let _ = writeln!(s, "speedup (median): {:.1}x", r.speedup);
    let _ = writeln!(
        s,
        "lut: build {:.1} ms, {} bytes | valid fraction {:.3}",
        r.lut_build_ms, r.lut_size_bytes, r.occupancy.valid_fraction
    );
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "per-camera claim:      {}", fmt(&r.occupancy.per_camera_claim));
    let _ = writeln!(s, "per-camera visibility: {}", fmt(&r.occupancy.per_camera_visibility));
    let _ = writeln!(s, "input checksum: {} (seed {})", r.input_checksum, r.seed);
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Writes the rendered report to `path`, or standard output when `None`.
pub fn emit_report(report: &BenchReport, format: ReportFormat, path: Option<&Path>) -> Result<(), BenchError> {
    let text = render_report(report, format);
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| BenchError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
