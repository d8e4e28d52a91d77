mod common;

use fastbev::geometry::{PlanarPose, VoxelGridSpec};
use fastbev::projection::BevTensor;
use fastbev::temporal::align_bev;
use std::f64::consts::FRAC_PI_2;

fn square_grid(n: usize, nz: usize) -> VoxelGridSpec {
    let h = n as f64 / 2.0;
    VoxelGridSpec::from_range([-h, -h, -1.0], [h, h, 1.0], [n, n, nz]).unwrap()
}

/// Tensor whose every channel is `f(x, y)` at the cell center, scaled per
/// channel so channels stay distinguishable.
fn sample(grid: &VoxelGridSpec, channels: usize, f: impl Fn(f64, f64) -> f64) -> BevTensor {
    let [nx, ny, nz] = grid.dims();
    let mut t = BevTensor::zeros(grid.dims(), channels);
    let n = nz * channels;
    for i in 0..nx {
        for j in 0..ny {
            let [x, y, _] = grid.center(i, j, 0);
            let base = ((i * ny + j) * n) as usize;
            for q in 0..n {
                t.data_mut()[base + q] = (f(x, y) * (1.0 + q as f64 * 0.25)) as f32;
            }
        }
    }
    t
}

#[test]
fn quarter_turn_matches_array_rotation() {
    let grid = square_grid(9, 2);
    let t = sample(&grid, 3, |x, y| (x * 7.0 + y * 3.0 + 0.5).sin() + 1.5);
    let out = align_bev(&t, &PlanarPose { tx: 0.0, ty: 0.0, yaw: FRAC_PI_2 }, &grid).unwrap();
    // current cell (i, j) sits at (x, y); a +90° turn of the ego means the
    // past frame saw it at (y, -x), i.e. past cell (j, n-1-i)
    let n = 9;
    for i in 0..n {
        for j in 0..n {
            for (a, b) in out.cell(i, j).iter().zip(t.cell(j, n - 1 - i)) {
                assert!((a - b).abs() <= 1e-5, "({i},{j}): {a} vs {b}");
            }
        }
    }
}

#[test]
fn translation_by_whole_cells_is_a_shift() {
    let grid = square_grid(12, 1);
    let t = sample(&grid, 2, |x, y| x * 0.3 - y * 0.1 + 5.0);
    let out = align_bev(&t, &PlanarPose { tx: -2.0, ty: 1.0, yaw: 0.0 }, &grid).unwrap();
    for i in 0..12usize {
        for j in 0..12usize {
            let (si, sj) = (i as i64 + 2, j as i64 - 1);
            if (0..12).contains(&si) && (0..12).contains(&sj) {
                assert_eq!(out.cell(i, j), t.cell(si as usize, sj as usize));
            } else {
                assert!(out.cell(i, j).iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn mass_never_grows_for_nonnegative_input() {
    let grid = square_grid(20, 1);
    let t = sample(&grid, 1, |x, y| (x * 0.4).cos() * (y * 0.3).sin() + 1.2);
    let total: f64 = t.data().iter().map(|&v| v as f64).sum();
    for (tx, ty, yaw) in [(0.3, -0.7, 0.0), (1.5, 2.5, 0.2), (-4.0, 0.0, -0.6), (0.0, 0.0, 1.0)] {
        let out = align_bev(&t, &PlanarPose { tx, ty, yaw }, &grid).unwrap();
        let s: f64 = out.data().iter().map(|&v| v as f64).sum();
        assert!(s <= total * (1.0 + 1e-6), "{s} > {total}");
    }
}

#[test]
fn two_warps_match_one_composed_warp() {
    // band-limited field, warped well inside a large grid
    let grid = square_grid(120, 1);
    let k = 2.0 * std::f64::consts::PI / 90.0;
    let f = move |x: f64, y: f64| (k * x + 0.3).sin() + (k * 0.8 * y - 0.2).cos();
    let t = sample(&grid, 1, f);
    let r1 = PlanarPose { tx: 1.3, ty: -0.6, yaw: 0.07 };
    let r2 = PlanarPose { tx: -0.45, ty: 0.9, yaw: -0.11 };
    let composed = r2.then_after(&r1);

    let exact = |rel: &PlanarPose| sample(&grid, 1, |x, y| {
        let (xp, yp) = rel.inverse().apply(x, y);
        f(xp, yp)
    });
    let two = align_bev(&align_bev(&t, &r1, &grid).unwrap(), &r2, &grid).unwrap();
    let one = align_bev(&t, &composed, &grid).unwrap();
    let truth = exact(&composed);
    let single_a = align_bev(&t, &r1, &grid).unwrap();

    // compare away from the zero-filled border
    let interior = |a: &BevTensor, b: &BevTensor| {
        let mut worst = 0.0f64;
        for i in 15..105 {
            for j in 15..105 {
                worst = worst.max((a.cell(i, j)[0] - b.cell(i, j)[0]).abs() as f64);
            }
        }
        worst
    };
    let err_one = interior(&one, &truth);
    let err_single = interior(&single_a, &exact(&r1)).max(err_one);
    let err_two = interior(&two, &truth);
    let peak = 2.0;
    assert!(err_two <= 2.0 * err_single + 1e-6, "two-step {err_two} vs single {err_single}");
    assert!(interior(&two, &one) <= 1e-3 * peak, "{}", interior(&two, &one));
}

#[test]
fn static_beacon_tracks_across_four_frames() {
    let track = common::track_static_beacon();
    assert_eq!(track.at_cell, vec![1.0; 4], "{:?}", track.at_cell);
    assert!(track.common_cells.contains(&[track.cell[0], track.cell[1]]));
    for c in &track.common_cells {
        let di = c[0].abs_diff(track.cell[0]);
        let dj = c[1].abs_diff(track.cell[1]);
        assert!(di <= 1 && dj <= 1, "stray common cell {c:?}, groups {:?}", track.group_sizes);
    }
}
