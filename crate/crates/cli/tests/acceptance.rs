//! Acceptance criteria AC1 to AC8. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lio_core::degeneracy::{select_params, DegeneracyReport, ProfilePair};
use lio_core::eskf::{
    forward_propagate, iterated_update, ErrorCov, ErrorVector, InitPriors, NavState, NoiseParams, UpdateOptions,
    ERROR_DIM, GRAVITY, MIN_CORRESPONDENCES,
};
use lio_core::eval::{absolute_trajectory_error, score_trajectory, Alignment, MarkerPose};
use lio_core::geom::{so3_exp, ImuSample, Point3, Pose};
use lio_core::pipeline::propagate_to;
use lio_core::plane::{fit_plane, residual_jacobian, Correspondence, PlaneFit};
use lio_core::synth::{imu_stream, Dataset, ImuNoiseSpec, MotionPreset, SceneKind, ScenePreset, SequenceSpec};
use lio_core::voxel::{voxel_downsample, MapConfig, VoxelMap};
use lio_core::{run_sequence, FrameResult, Mode, OdometryConfig};
use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

/// Pass flag plus the measured numbers behind it.
struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn preset(scene: ScenePreset) -> (SequenceSpec, Dataset) {
    let spec = SequenceSpec::preset(scene, MotionPreset::Traverse, SEED);
    let data = spec.generate().expect("preset generates");
    (spec, data)
}

fn run(data: &Dataset, adaptive: bool) -> Vec<FrameResult> {
    let config = OdometryConfig {
        adaptive_enabled: adaptive,
        ..OdometryConfig::default()
    };
    run_sequence(&config, &data.scans, &data.imu, &mut []).expect("sequence runs")
}

fn mean_correspondences(frames: &[FrameResult]) -> f64 {
    let sum: usize = frames.iter().map(|r| r.stats.final_correspondences()).sum();
    sum as f64 / frames.len() as f64
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn ac1() -> Outcome {
    let profiles = ProfilePair::default();
    let general = select_params(&DegeneracyReport::default(), &profiles);
    let degenerate = select_params(
        &DegeneracyReport {
            decision: Mode::Degenerate,
            ..DegeneracyReport::default()
        },
        &profiles,
    );
    let g = (general.voxel_size, general.search_radius, general.residual_margin);
    let d = (degenerate.voxel_size, degenerate.search_radius, degenerate.residual_margin);
    Outcome::new(
        g == (0.2, 3.0, 0.05) && d == (0.1, 2.0, 0.025) && general.mode == Mode::General && degenerate.mode == Mode::Degenerate,
        format!("general {g:?}, degenerate {d:?}"),
    )
}

fn ac2() -> Outcome {
    let (_, data) = preset(ScenePreset::Corridor);
    let cfg = OdometryConfig::default();
    let mut monotone_violations = 0;
    for scan in &data.scans {
        let g = voxel_downsample(&scan.points, cfg.profiles.general().voxel_size).len();
        let d = voxel_downsample(&scan.points, cfg.profiles.degenerate().voxel_size).len();
        monotone_violations += usize::from(d < g);
    }
    let adaptive = run(&data, true);
    let fixed = run(&data, false);
    // the first frame only seeds the map
    let (a, f) = (mean_correspondences(&adaptive[1..]), mean_correspondences(&fixed[1..]));
    let degenerate_frames = adaptive.iter().filter(|r| r.profile.mode == Mode::Degenerate).count();
    let ratio = a / f;
    Outcome::new(
        monotone_violations == 0 && ratio >= 1.5,
        format!(
            "count monotonicity violations {monotone_violations}/{}; mean correspondences adaptive {a:.0} vs fixed {f:.0} (ratio {ratio:.2}, need 1.5); {degenerate_frames} degenerate frames",
            data.scans.len()
        ),
    )
}

/// Maximal runs of equal modes as (mode, first frame).
fn mode_runs(frames: &[FrameResult]) -> Vec<(Mode, usize)> {
    let mut runs: Vec<(Mode, usize)> = Vec::new();
    for r in frames {
        if runs.last().is_none_or(|(m, _)| *m != r.profile.mode) {
            runs.push((r.profile.mode, r.frame));
        }
    }
    runs
}

fn ac3() -> Outcome {
    let (spec, data) = preset(ScenePreset::RoomCorridorRoom);
    let SceneKind::RoomCorridorRoom {
        corridor_length,
        corridor_width,
        ..
    } = spec.scene.kind
    else {
        unreachable!("room-corridor-room preset")
    };
    let traj = spec.trajectory().unwrap();
    let world_x = |t: f64| traj.pose(t).translation.x;
    let entry = data.scans.iter().position(|s| world_x(s.t_end()) >= 0.0).unwrap();
    let exit = data
        .scans
        .iter()
        .position(|s| world_x(s.t_end()) >= corridor_length)
        .unwrap();
    let h = OdometryConfig::default().detector.hysteresis_frames;

    let adaptive = run(&data, true);
    let fixed = run(&data, false);

    let final_error = (adaptive.last().unwrap().pose.translation - data.ground_truth.last().unwrap().1.translation).norm();
    let accurate = final_error < 0.2;

    let runs = mode_runs(&adaptive);
    let shape_ok = runs.iter().map(|(m, _)| *m).eq([Mode::General, Mode::Degenerate, Mode::General]);
    let timed = shape_ok && runs[1].1.abs_diff(entry) <= h && runs[2].1.abs_diff(exit) <= h;

    let warned = fixed[entry..exit].iter().any(|r| r.flags.degenerate_warning);
    let fixed_min = fixed[entry..exit]
        .iter()
        .map(|r| r.stats.final_correspondences())
        .min()
        .unwrap();
    let peak_fraction = adaptive[entry..exit]
        .iter()
        .map(|r| r.report.near_origin_fraction)
        .fold(0.0, f64::max);
    let min_count = adaptive[entry..exit]
        .iter()
        .map(|r| r.report.downsampled_count)
        .min()
        .unwrap();

    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    Outcome::new(
        accurate && timed && warned,
        format!(
            "corridor {corridor_width} m wide, frames {entry}..{exit}; (a) final error {final_error:.3} m {}; \
             (b) mode runs {runs:?} {} (corridor peak near-origin fraction {peak_fraction:.2}, min count {min_count}); \
             (c) fixed run warnings in corridor {warned}, min correspondences {fixed_min} vs threshold {MIN_CORRESPONDENCES} {}",
            mark(accurate),
            mark(timed),
            mark(warned)
        ),
    )
}

/// Three orthogonal walls that stop short of each other.
fn box_corner(step: f64) -> Vec<Point3> {
    let mut pts = Vec::new();
    let n = (4.0 / step) as i64;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (i as f64 * step - 2.0, j as f64 * step - 2.0);
            pts.push(Point3::new(a, b, -1.5));
            if b > -1.0 {
                pts.push(Point3::new(a, 2.5, b));
                pts.push(Point3::new(-2.5, a, b));
            }
        }
    }
    pts
}

fn ac4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pts = box_corner(0.15);
    let mut map = VoxelMap::new(MapConfig::default());
    map.insert_scan(&pts);
    let scan: Vec<_> = pts.iter().step_by(17).copied().collect();
    let noise = NoiseParams::default();
    let profile = *ProfilePair::default().general();
    let mut state = NavState::default();
    let mut cov: ErrorCov = InitPriors::default().covariance();
    let (mut worst_eig, mut worst_asym) = (f64::INFINITY, 0.0f64);
    let cycles = 10_000;
    for _ in 0..cycles {
        let sample = ImuSample::new(
            0.0,
            Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            Vector3::new(0.0, 0.0, GRAVITY) + Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
        )
        .unwrap();
        (state, cov) = forward_propagate(&state, &cov, &sample, rng.random_range(0.001..0.02), &noise).unwrap();
        // keep the scan overlapping the map
        state.position = Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        state.rotation = so3_exp(&Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02)));
        let out = iterated_update(&state, &cov, &scan, &map, &profile, &UpdateOptions::default()).unwrap();
        (state, cov) = (out.state, out.cov);
        worst_asym = worst_asym.max((cov - cov.transpose()).abs().max());
        worst_eig = worst_eig.min(SymmetricEigen::new(cov).eigenvalues.min());
    }
    let psd_ok = worst_eig >= -1e-9 && worst_asym <= 1e-9;

    let h = 1e-6;
    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let state = NavState {
            rotation: so3_exp(&(random_unit(&mut rng) * rng.random_range(0.0..3.0))),
            position: random_unit(&mut rng) * rng.random_range(0.0..10.0),
            ..NavState::default()
        };
        // a stacked measurement of 20 correspondences
        let corrs: Vec<_> = (0..20)
            .map(|_| {
                let body = Point3::from_coords(random_unit(&mut rng) * rng.random_range(0.5..20.0));
                Correspondence {
                    scan_point: body,
                    world_point: body,
                    plane: PlaneFit {
                        normal: random_unit(&mut rng),
                        d: rng.random_range(-3.0..3.0),
                        valid: true,
                        inlier_count: 5,
                    },
                }
            })
            .collect();
        let stacked = |s: &NavState| -> Vec<f64> { corrs.iter().map(|c| residual_jacobian(c, s).0).collect() };
        for (row, c) in corrs.iter().enumerate() {
            let analytic = residual_jacobian(c, &state).1;
            let scale = analytic.norm().max(1e-3);
            for i in 0..ERROR_DIM {
                let mut delta = ErrorVector::zeros();
                delta[i] = h;
                let plus = stacked(&state.boxplus(&delta))[row];
                delta[i] = -h;
                let minus = stacked(&state.boxplus(&delta))[row];
                let numeric = (plus - minus) / (2.0 * h);
                worst_rel = worst_rel.max((numeric - analytic[i]).abs() / scale);
            }
        }
    }
    Outcome::new(
        psd_ok && worst_rel < 1e-5,
        format!(
            "{cycles} cycles: min eigenvalue {worst_eig:.3e}, max asymmetry {worst_asym:.1e}; Jacobian max relative error {worst_rel:.2e} over 100 configurations"
        ),
    )
}

fn svd_normal(points: &[Point3]) -> Vector3<f64> {
    let n = points.len();
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords()) / n as f64;
    let m = DMatrix::from_fn(n, 3, |r, k| points[r].coords()[k] - c[k]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let i = svd.singular_values.imin();
    Vector3::new(vt[(i, 0)], vt[(i, 1)], vt[(i, 2)])
}

fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs()).to_degrees()
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut knn_mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(50..800);
        let extent = rng.random_range(1.0..8.0);
        let cloud: Vec<_> = (0..n)
            .map(|_| Point3::from_coords(Vector3::from_fn(|_, _| rng.random_range(0.0..extent))))
            .collect();
        let mut map = VoxelMap::new(MapConfig {
            cell_size: rng.random_range(0.2..1.5),
            capacity_per_cell: 100_000,
            min_spacing: 0.0,
            ..MapConfig::default()
        });
        map.insert_scan(&cloud);
        let stored = map.points();
        let q = Point3::from_coords(Vector3::from_fn(|_, _| rng.random_range(-1.0..extent + 1.0)));
        let k = rng.random_range(1..12);
        let radius = rng.random_range(0.1..3.0);
        let mut brute: Vec<f64> = stored
            .iter()
            .map(|p| p.distance(&q))
            .filter(|d| *d <= radius)
            .collect();
        brute.sort_by(f64::total_cmp);
        brute.truncate(k);
        let got: Vec<f64> = map.knn_search(&q, k, radius).iter().map(|nb| nb.distance).collect();
        knn_mismatches += usize::from(got != brute);
    }

    let mut voxel_mismatches = 0;
    for _ in 0..100 {
        let size = rng.random_range(0.05..1.0);
        let cloud: Vec<_> = (0..rng.random_range(1..3000))
            .map(|_| Point3::from_coords(Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0))))
            .collect();
        let groups: HashSet<(i64, i64, i64)> = cloud
            .iter()
            .map(|p| {
                (
                    (p.x() / size).floor() as i64,
                    (p.y() / size).floor() as i64,
                    (p.z() / size).floor() as i64,
                )
            })
            .collect();
        voxel_mismatches += usize::from(voxel_downsample(&cloud, size).len() != groups.len());
    }

    let mut worst_plane = 0.0f64;
    let mut invalid_planes = 0;
    for _ in 0..100 {
        let normal = random_unit(&mut rng);
        let u = normal.cross(&Vector3::x());
        let u = if u.norm() < 1e-3 { normal.cross(&Vector3::y()) } else { u }.normalize();
        let v = normal.cross(&u);
        let offset = rng.random_range(-5.0..5.0);
        let pts: Vec<_> = (0..50)
            .map(|_| {
                let (a, b, e) = (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.02..0.02),
                );
                Point3::from_coords(u * a + v * b + normal * (offset + e))
            })
            .collect();
        let fit = fit_plane(&pts, 0.05);
        invalid_planes += usize::from(!fit.valid);
        worst_plane = worst_plane
            .max(angle_deg(&fit.normal, &svd_normal(&pts)))
            .max(angle_deg(&fit.normal, &normal));
    }

    let mut worst_pos = 0.0f64;
    let mut worst_rot = 0.0f64;
    for scene in ScenePreset::ALL {
        let spec = SequenceSpec::preset(scene, MotionPreset::Traverse, SEED);
        let traj = spec.trajectory().unwrap();
        let (t0, t1) = (spec.trajectory.start_time(), spec.trajectory.end_time());
        let imu = imu_stream(&traj, t0, t1, spec.trajectory.imu_rate, &ImuNoiseSpec::noiseless(), 0).unwrap();
        let mut state = NavState {
            t: t0,
            ..NavState::default()
        };
        let mut cov = InitPriors::default().covariance();
        let mut prev = imu[0];
        for &(t, _) in spec.trajectory.waypoints.iter().filter(|(t, _)| *t > t0) {
            let lo = imu.partition_point(|s| s.t <= state.t);
            (state, cov, prev) =
                propagate_to(&state, &cov, prev, &imu[lo..], t, &NoiseParams::default(), &mut Vec::new()).unwrap();
            let truth = spec.relative_pose(&traj, t);
            worst_pos = worst_pos.max((state.position - truth.translation).norm());
            worst_rot = worst_rot.max(state.rotation.angle_to(&truth.rotation));
        }
    }

    Outcome::new(
        knn_mismatches == 0 && voxel_mismatches == 0 && invalid_planes == 0 && worst_plane < 2.0 && worst_pos < 1e-3 && worst_rot < 1e-3,
        format!(
            "kNN mismatches {knn_mismatches}/100; voxel count mismatches {voxel_mismatches}/100; plane max angle {worst_plane:.3} deg ({invalid_planes} invalid); IMU waypoints max {worst_pos:.2e} m, {worst_rot:.2e} rad"
        ),
    )
}

fn ac6() -> Outcome {
    let cases = [(0.005, 10), (0.05, 6), (0.5, 3), (1.5, 0)];
    let traj = [(0.0, Pose::identity())];
    let markers: Vec<_> = cases
        .iter()
        .enumerate()
        .map(|(i, (d, _))| MarkerPose {
            id: i as u32,
            position: Vector3::new(*d, 0.0, 0.0),
        })
        .collect();
    let report = score_trajectory(&traj, &markers, Alignment::None).unwrap();
    let got: Vec<(f64, u32)> = report.markers.iter().map(|m| (m.distance, m.points)).collect();
    let want: Vec<(f64, u32)> = cases.to_vec();
    Outcome::new(
        got == want && report.total == 19 && report.bucket_counts == [1, 1, 1, 1],
        format!("points {:?}, total {}", got.iter().map(|g| g.1).collect::<Vec<_>>(), report.total),
    )
}

fn lio(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lio")).args(args).output().expect("spawn lio");
    assert!(out.status.success(), "lio {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn ac7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = |p: &Path| p.to_str().unwrap().to_owned();
    lio(&["synth", "--scene", "room", "--out-dir", &d(&data), "--seed", &SEED.to_string()]);
    let run_once = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let traj = dir.path().join(format!("{tag}.tum"));
        let log = dir.path().join(format!("{tag}.csv"));
        lio(&[
            "run",
            "--config",
            &d(&data.join("config.txt")),
            "--scans",
            &d(&data.join("scans.bin")),
            "--imu",
            &d(&data.join("imu.csv")),
            "--out-traj",
            &d(&traj),
            "--out-log",
            &d(&log),
        ]);
        (std::fs::read(traj).unwrap(), std::fs::read(log).unwrap())
    };
    let (a_traj, a_log) = run_once("a");
    let (b_traj, b_log) = run_once("b");
    let lines = a_traj.iter().filter(|b| **b == b'\n').count();
    Outcome::new(
        !a_traj.is_empty() && a_traj == b_traj && a_log == b_log,
        format!(
            "{lines} poses, trajectories identical {}, logs identical {}",
            a_traj == b_traj,
            a_log == b_log
        ),
    )
}

fn ac8() -> Outcome {
    let (_, data) = preset(ScenePreset::Room);
    let out = run(&data, true);
    let est: Vec<_> = out.iter().map(|r| (r.t, r.pose)).collect();
    let ate = absolute_trajectory_error(&est, &data.ground_truth).unwrap();
    Outcome::new(
        out.len() == 200 && ate.rms < 0.05,
        format!("{} frames, ATE rms {:.4} m (max {:.4} m)", out.len(), ate.rms, ate.max),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 8] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{name} {verdict} ({:.1} s) {}", start.elapsed().as_secs_f64(), outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
}
