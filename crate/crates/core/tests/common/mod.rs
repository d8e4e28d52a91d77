#![allow(dead_code)]

use fastbev::geometry::{CameraCalibration, VoxelGridSpec};
use fastbev::lut::LutBuildConfig;
use fastbev::projection::FeatureMapSet;
use fastbev::scene::random_rig;
use rand::seq::SliceRandom;
use rand::Rng;

pub struct Instance {
    pub rig: Vec<CameraCalibration>,
    pub grid: VoxelGridSpec,
    pub cfg: LutBuildConfig,
    pub feats: FeatureMapSet,
}

/// Random rig (1..=6 cameras), grid up to 64×64×8, C up to 64, shuffled
/// priority, features in [-1, 1).
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let n_cam = rng.gen_range(1..=6);
    let stride = [1u32, 2, 4, 8][rng.gen_range(0..4)];
    let (h_f, w_f) = (rng.gen_range(2..=24u32), rng.gen_range(2..=40u32));
    let rig = random_rig(rng, n_cam, w_f * stride, h_f * stride);
    let dims = [rng.gen_range(1..=64), rng.gen_range(1..=64), rng.gen_range(1..=8)];
    let half = [rng.gen_range(5.0..60.0), rng.gen_range(5.0..60.0)];
    let grid = VoxelGridSpec::from_range(
        [-half[0], -half[1], rng.gen_range(-4.0..0.0)],
        [half[0], half[1], rng.gen_range(0.5..6.0)],
        dims,
    )
    .unwrap();
    let mut cfg = LutBuildConfig::for_rig(&rig, stride);
    cfg.camera_priority.shuffle(rng);
    let c = rng.gen_range(1..=64);
    let data = (0..n_cam * (h_f * w_f) as usize * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let feats = FeatureMapSet::new(n_cam, h_f as usize, w_f as usize, c, data).unwrap();
    Instance { rig, grid, cfg, feats }
}

/// Straightforward per-voxel, per-camera scan written against the raw
/// matrices, independent of the library's projection helpers.
pub fn naive_lut(rig: &[CameraCalibration], grid: &VoxelGridSpec, cfg: &LutBuildConfig) -> Vec<i32> {
    let [nx, ny, nz] = grid.dims();
    let (o, d) = (grid.origin(), grid.cell());
    let s = cfg.feature_stride;
    let h_f = (rig[0].image_height / s) as i64;
    let w_f = (rig[0].image_width / s) as i64;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let p = [o[0] + i as f64 * d[0], o[1] + j as f64 * d[1], o[2] + k as f64 * d[2]];
                let mut entry = -1i32;
                for &cam in &cfg.camera_priority {
                    let c = rig.iter().find(|c| c.camera_id == cam).unwrap();
                    let e = c.extrinsics.matrix();
                    let row = |r: usize| e[(r, 0)] * p[0] + e[(r, 1)] * p[1] + e[(r, 2)] * p[2] + e[(r, 3)];
                    let zc = row(2);
                    if zc <= cfg.near_clip {
                        continue;
                    }
                    let (xn, yn) = (row(0) / zc, row(1) / zc);
                    let kk = c.intrinsics.matrix();
                    let u = kk[(0, 0)] * xn + kk[(0, 1)] * yn + kk[(0, 2)];
                    let v = kk[(1, 0)] * xn + kk[(1, 1)] * yn + kk[(1, 2)];
                    if u < 0.0 || v < 0.0 || u >= c.image_width as f64 || v >= c.image_height as f64 {
                        continue;
                    }
                    let (uf, vf) = ((u / s as f64).floor() as i64, (v / s as f64).floor() as i64);
                    if uf >= w_f || vf >= h_f {
                        continue;
                    }
                    entry = (cam as i64 * h_f * w_f + vf * w_f + uf) as i32;
                    break;
                }
                out.push(entry);
            }
        }
    }
    out
}

/// Channel-group footprints of a static beacon after four-frame fusion.
pub struct BeaconTrack {
    /// Beacon cell `(i, j)` and z-slice in the current frame.
    pub cell: [usize; 3],
    /// Signature value at the beacon cell, per channel group.
    pub at_cell: Vec<f32>,
    /// Cells lit (≥ 0.5) in every channel group at the beacon's z-slice.
    pub common_cells: Vec<[usize; 2]>,
    /// Number of lit cells per channel group at that z-slice.
    pub group_sizes: Vec<usize>,
}

/// Ego drives +x at 4 m/s with 0.5 s keyframes; a beacon sits on a voxel
/// center in every frame. Renders, projects and fuses four frames.
pub fn track_static_beacon() -> BeaconTrack {
    use fastbev::bench::GridPreset;
    use fastbev::geometry::relative_planar_pose;
    use fastbev::projection::project_dense;
    use fastbev::scene::{make_nuscenes_like_rig, one_hot, render_beacons, Beacon, SyntheticScene};
    use fastbev::temporal::{fuse_frames, FrameBundle};
    use nalgebra::Vector3;

    let rig = make_nuscenes_like_rig("six_cam_default").unwrap();
    let grid = GridPreset::G200x200x4.grid();
    let cfg = LutBuildConfig::for_rig(&rig, 4);
    let lut = fastbev::lut::build_lut(&rig, &grid, &cfg).unwrap();
    let (channels, sig) = (4, 2);
    let beacon = Beacon {
        position: Vector3::new(26.25, 10.25, 0.0),
        signature: one_hot(sig, channels),
    };
    let scene = SyntheticScene::straight_line(rig, 4, 6.0, 4.0, 0.5, vec![beacon]);
    let bundles: Vec<FrameBundle> = (0..4)
        .map(|f| FrameBundle {
            bev: project_dense(&lut, &render_beacons(&scene, f, 4).unwrap()).unwrap(),
            pose: scene.trajectory[f],
            frame_offset: f as u32,
        })
        .collect();
    // the motion between keyframes is a whole number of cells
    let rel = relative_planar_pose(&scene.trajectory[1], &scene.trajectory[0]);
    assert!((rel.tx + 2.0).abs() < 1e-12 && rel.ty == 0.0 && rel.yaw == 0.0);

    let fused = fuse_frames(&bundles, 0, &grid).unwrap();
    let [nx, ny, nz] = grid.dims();
    assert_eq!(fused.dims(), [nx, ny, 4 * nz]);
    let p = scene.beacon_in_ego(0, 0);
    let (o, d) = (grid.origin(), grid.cell());
    let idx = |a: usize| ((p[a] - o[a]) / d[a]).round() as usize;
    let cell = [idx(0), idx(1), idx(2)];
    let value = |i: usize, j: usize, g: usize| fused.voxel(i, j, g * nz + cell[2])[sig];
    let at_cell = (0..4).map(|g| value(cell[0], cell[1], g)).collect();
    let mut common_cells = Vec::new();
    let mut group_sizes = vec![0; 4];
    for i in 0..nx {
        for j in 0..ny {
            let lit: Vec<bool> = (0..4).map(|g| value(i, j, g) >= 0.5).collect();
            for (g, &l) in lit.iter().enumerate() {
                group_sizes[g] += l as usize;
            }
            if lit.iter().all(|&l| l) {
                common_cells.push([i, j]);
            }
        }
    }
    BeaconTrack {
        cell,
        at_cell,
        common_cells,
        group_sizes,
    }
}

/// Random camera from the fixture rig or a random rig.
fn any_camera<R: Rng>(rng: &mut R) -> CameraCalibration {
    if rng.gen_bool(0.5) {
        let rig = fastbev::scene::make_nuscenes_like_rig("six_cam_default").unwrap();
        rig[rng.gen_range(0..rig.len())].clone()
    } else {
        let w = rng.gen_range(64..2000);
        let h = rng.gen_range(64..1200);
        random_rig(rng, 1, w, h).remove(0)
    }
}

/// Ego-frame point in front of `cam` that lands near its image.
fn point_in_view<R: Rng>(rng: &mut R, cam: &CameraCalibration) -> nalgebra::Vector3<f64> {
    let k = cam.intrinsics.matrix();
    let u = rng.gen_range(-0.2..1.2) * cam.image_width as f64;
    let v = rng.gen_range(-0.2..1.2) * cam.image_height as f64;
    let depth = rng.gen_range(0.5..80.0);
    let xn = (u - k[(0, 2)]) / k[(0, 0)];
    let yn = (v - k[(1, 2)]) / k[(1, 1)];
    let p_cam = nalgebra::Point3::new(xn * depth, yn * depth, depth);
    cam.extrinsics.ego_from_camera().transform_point(&p_cam).coords
}

/// Pixel error between `A·project(K, p)` and `project(A·K, p)` for one
/// random image augmentation and point.
pub fn image_aug_error<R: Rng>(rng: &mut R) -> f64 {
    use fastbev::augment::{apply_image_aug, AugConfig};
    use fastbev::geometry::NEAR_CLIP;
    let cam = any_camera(rng);
    let cfg = AugConfig {
        image_rotation_deg: 30.0,
        image_scale: (0.5, 3.0),
        image_crop_max: (16.0, 16.0),
        ..AugConfig::default()
    };
    let aug = cfg.sample_image(rng);
    let out = apply_image_aug(&aug, &cam).unwrap();
    let p = point_in_view(rng, &cam);
    let (u, v, _) = cam.project_pixel(&p, NEAR_CLIP).unwrap();
    let want = aug.matrix(cam.image_width, cam.image_height) * nalgebra::Vector3::new(u, v, 1.0);
    let (u2, v2, _) = out.calib.project_pixel(&p, NEAR_CLIP).unwrap();
    (want.x / want.z - u2).abs().max((want.y / want.z - v2).abs())
}

/// Worst pixel error over all cameras between `project(E', B·p)` and
/// `project(E, p)` for one random BEV augmentation and point.
pub fn bev_aug_error<R: Rng>(rng: &mut R) -> f64 {
    use fastbev::augment::{apply_bev_aug, AugConfig};
    use fastbev::geometry::NEAR_CLIP;
    let rig = if rng.gen_bool(0.5) {
        fastbev::scene::make_nuscenes_like_rig("six_cam_default").unwrap()
    } else {
        let n = rng.gen_range(1..=6);
        random_rig(rng, n, 800, 450)
    };
    let cfg = AugConfig {
        bev_rotation_deg: 180.0,
        bev_scale: (0.5, 2.0),
        ..AugConfig::default()
    };
    let aug = cfg.sample_bev(rng);
    let (rig2, _) = apply_bev_aug(&aug, &rig, &[]).unwrap();
    let cam = rng.gen_range(0..rig.len());
    let p = point_in_view(rng, &rig[cam]);
    let bp = aug.matrix().transform_point(&nalgebra::Point3::from(p)).coords;
    let mut worst = 0.0f64;
    for (a, b) in rig.iter().zip(&rig2) {
        match (a.project_pixel(&p, NEAR_CLIP), b.project_pixel(&bp, NEAR_CLIP)) {
            (Some((u, v, _)), Some((u2, v2, _))) => worst = worst.max((u - u2).abs()).max((v - v2).abs()),
            (None, None) => {}
            // depth scales with the scene while the near plane does not, so
            // visibility may differ only just beyond the clip distance
            (x, y) => {
                if x.or(y).unwrap().2 > 4.0 * NEAR_CLIP {
                    return f64::INFINITY;
                }
            }
        }
    }
    worst
}
