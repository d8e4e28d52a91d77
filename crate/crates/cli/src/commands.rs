use std::path::{Path, PathBuf};
use std::time::Instant;

use fastbev::augment::{apply_bev_aug, apply_image_aug};
use fastbev::bench::{checksum, emit_report, random_features, run_benchmark, ReportFormat};
use fastbev::geometry::{CameraCalibration, EgoPose};
use fastbev::io::{read_bev, read_features, write_bev};
use fastbev::lut::{build_lut, lut_stats, read_lut, write_lut, LutBuildConfig, ProjectionLut};
use fastbev::projection::{project_dense, project_dense_sharded};
use fastbev::scene::{load_nuscenes_calibration, make_nuscenes_like_rig};
use fastbev::temporal::{fuse_frames, FrameBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;
use crate::settings::Settings;

fn require_out(s: &Settings, what: &str) -> Result<PathBuf, CliError> {
    s.out
        .clone()
        .ok_or_else(|| CliError::Config(format!("{what} needs --out <FILE>")))
}

fn load_rig(s: &Settings) -> Result<Vec<CameraCalibration>, CliError> {
    Ok(match &s.calib {
        Some(path) => load_nuscenes_calibration(path)?,
        None => make_nuscenes_like_rig("six_cam_default").expect("bundled preset"),
    })
}

fn pool(threads: usize) -> Result<Option<rayon::ThreadPool>, CliError> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Serialize)]
struct LutSummary {
    dims: [usize; 3],
    feature_dims: [usize; 2],
    num_cameras: usize,
    size_bytes: usize,
    valid_fraction: f64,
    per_camera_claim: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    build_ms: Option<f64>,
}

impl LutSummary {
    fn new(lut: &ProjectionLut, build_ms: Option<f64>) -> Self {
        let stats = lut_stats(lut);
        let (h, w) = lut.feature_dims();
        Self {
            dims: lut.dims(),
            feature_dims: [h, w],
            num_cameras: lut.num_cameras(),
            size_bytes: lut.size_bytes(),
            valid_fraction: stats.valid_fraction,
            per_camera_claim: stats.camera_fractions(),
            build_ms,
        }
    }

    fn render(&self, format: ReportFormat) -> String {
        let join = |v: &[f64], sep: &str| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(sep);
        let [nx, ny, nz] = self.dims;
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("summary serializes") + "\n",
            ReportFormat::Csv => format!(
                "grid,feature_dims,num_cameras,size_bytes,valid_fraction,per_camera_claim\n{nx}x{ny}x{nz},{}x{},{},{},{:.6},{}\n",
                self.feature_dims[0],
                self.feature_dims[1],
                self.num_cameras,
                self.size_bytes,
                self.valid_fraction,
                join(&self.per_camera_claim, ";")
            ),
            ReportFormat::Table => {
                let mut t = format!(
                    "grid            {nx}x{ny}x{nz}\nfeature map     {}x{} x {} cameras\ntable size      {} bytes\n",
                    self.feature_dims[0], self.feature_dims[1], self.num_cameras, self.size_bytes
                );
                if let Some(ms) = self.build_ms {
                    t += &format!("build time      {ms:.2} ms\n");
                }
                t += &format!(
                    "valid fraction  {:.4}\nper-camera      {}\n",
                    self.valid_fraction,
                    join(&self.per_camera_claim, " ")
                );
                t
            }
        }
    }
}

pub fn build_lut_cmd(s: &Settings, augment: bool) -> Result<(), CliError> {
    let out = require_out(s, "build-lut")?;
    let mut rig = load_rig(s)?;
    if augment {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mut image = s.augment.sample_image(&mut rng);
        // resize/rotate, then crop back to the original input size
        image.output_size = rig.first().map(|c| (c.image_width, c.image_height));
        let bev = s.augment.sample_bev(&mut rng);
        rig = rig
            .iter()
            .map(|c| {
                let a = apply_image_aug(&image, c)?;
                if let Some(w) = a.warning {
                    eprintln!("warning: {}: {w:?}", c.name);
                }
                Ok(a.calib)
            })
            .collect::<Result<_, CliError>>()?;
        rig = apply_bev_aug(&bev, &rig, &[])?.0;
        eprintln!("augmented with {image:?} and {bev:?}");
    }
    let grid = s.grid.grid();
    let t = Instant::now();
    let lut = build_lut(&rig, &grid, &LutBuildConfig::for_rig(&rig, s.stride))?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    write_lut(&out, &lut).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    print!("{}", LutSummary::new(&lut, Some(ms)).render(s.format));
    Ok(())
}

pub fn stats_cmd(s: &Settings, lut: &Path) -> Result<(), CliError> {
    let lut = read_lut(lut)?;
    let text = LutSummary::new(&lut, None).render(s.format);
    match &s.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn project_cmd(s: &Settings, lut: &Path, features: Option<&Path>) -> Result<(), CliError> {
    let out = require_out(s, "project")?;
    let lut = read_lut(lut)?;
    let feats = match features {
        Some(p) => read_features(p)?,
        None => {
            let (h, w) = lut.feature_dims();
            random_features(s.seed, lut.num_cameras(), h, w, s.channels)
        }
    };
    let t = Instant::now();
    let bev = match pool(s.threads)? {
        Some(pool) => pool.install(|| project_dense_sharded(&lut, &feats))?,
        None => project_dense(&lut, &feats)?,
    };
    let ms = t.elapsed().as_secs_f64() * 1e3;
    write_bev(&out, &bev)?;
    let [nx, ny, nz] = bev.dims();
    println!(
        "wrote {} ({nx}x{ny}x{nz}, C={}) in {ms:.2} ms, checksum {}",
        out.display(),
        bev.channels(),
        checksum(bev.data())
    );
    Ok(())
}

pub fn bench_cmd(s: &Settings) -> Result<(), CliError> {
    let report = run_benchmark(&s.bench_config())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit_report(&report, s.format, s.out.as_deref())?;
    Ok(())
}

/// Parses `x,y,yaw` (meters, meters, radians).
fn parse_pose(text: &str, timestamp: f64) -> Result<EgoPose, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("pose `{text}`: {e}")))?;
    match parts[..] {
        [x, y, yaw] => Ok(EgoPose::planar(x, y, yaw, timestamp)),
        _ => Err(CliError::Config(format!("pose `{text}` must be x,y,yaw"))),
    }
}

pub fn fuse_cmd(s: &Settings, bevs: &[PathBuf], poses: &[String]) -> Result<(), CliError> {
    let out = require_out(s, "fuse")?;
    if bevs.len() != poses.len() {
        return Err(CliError::Config(format!(
            "{} --bev files but {} --pose values",
            bevs.len(),
            poses.len()
        )));
    }
    let bundles = bevs
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(f, (path, pose))| {
            Ok(FrameBundle {
                bev: read_bev(path)?,
                pose: parse_pose(pose, -(f as f64) * fastbev::bench::KEYFRAME_INTERVAL_S)?,
                frame_offset: f as u32,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let fused = fuse_frames(&bundles, 0, &s.grid.grid())?;
    write_bev(&out, &fused)?;
    let [nx, ny, nz] = fused.dims();
    println!(
        "wrote {} ({nx}x{ny}x{nz}, C={}) from {} frames, checksum {}",
        out.display(),
        fused.channels(),
        bundles.len(),
        checksum(fused.data())
    );
    Ok(())
}
