//! Short end-to-end runs on the synthetic presets.

use lio_core::eval::absolute_trajectory_error;
use lio_core::synth::{Dataset, MotionPreset, ScenePreset, SequenceSpec};
use lio_core::voxel::voxel_downsample;
use lio_core::{run_sequence, FrameResult, Mode, OdometryConfig};

fn dataset(scene: ScenePreset, motion: MotionPreset, frames: usize) -> Dataset {
    let mut spec = SequenceSpec::preset(scene, motion, 11);
    spec.frames = frames;
    spec.generate().unwrap()
}

fn run(config: &OdometryConfig, data: &Dataset) -> Vec<FrameResult> {
    run_sequence(config, &data.scans, &data.imu, &mut []).unwrap()
}

fn ate(out: &[FrameResult], data: &Dataset) -> f64 {
    let est: Vec<_> = out.iter().map(|r| (r.t, r.pose)).collect();
    absolute_trajectory_error(&est, &data.ground_truth).unwrap().rms
}

#[test]
fn stationary_sensor_stays_put() {
    let data = dataset(ScenePreset::Room, MotionPreset::Static, 40);
    let out = run(&OdometryConfig::default(), &data);
    let drift = out.iter().map(|r| r.pose.translation.norm()).fold(0.0, f64::max);
    assert!(drift < 0.01, "drift {drift}");
    assert!(out.iter().all(|r| r.profile.mode == Mode::General));
    assert!(out[0].flags.bootstrap && !out[1].flags.bootstrap);
}

#[test]
fn room_segment_tracks_ground_truth() {
    let data = dataset(ScenePreset::Room, MotionPreset::Traverse, 80);
    let out = run(&OdometryConfig::default(), &data);
    let e = ate(&out, &data);
    assert!(e < 0.05, "ATE {e}");
    assert!(out.iter().all(|r| !r.flags.numerical_failure && !r.flags.degenerate_warning));
}

#[test]
fn corridor_switches_to_degenerate_profile() {
    let data = dataset(ScenePreset::Corridor, MotionPreset::Traverse, 30);
    let out = run(&OdometryConfig::default(), &data);
    let hysteresis = OdometryConfig::default().detector.hysteresis_frames;
    let bad: Vec<_> = out.iter().filter(|r| r.report.raw != Mode::Degenerate).map(|r| (r.frame, r.report.downsampled_count, r.report.near_origin_fraction)).collect();
    assert!(bad.is_empty(), "{bad:?}");
    // the switch lands on the last of `hysteresis` consecutive verdicts
    assert!(out[..hysteresis - 1].iter().all(|r| r.profile.mode == Mode::General));
    assert!(out[hysteresis - 1..].iter().all(|r| r.profile.mode == Mode::Degenerate));

    let fixed = run(
        &OdometryConfig {
            adaptive_enabled: false,
            ..OdometryConfig::default()
        },
        &data,
    );
    assert!(fixed.iter().all(|r| r.profile.mode == Mode::General));
    // the finer grid keeps more points on every frame
    for (a, f) in out.iter().zip(&fixed).skip(hysteresis - 1) {
        assert!(a.registered_count >= f.registered_count);
    }
}

#[test]
fn finer_voxels_never_keep_fewer_points() {
    let data = dataset(ScenePreset::Corridor, MotionPreset::Traverse, 10);
    let cfg = OdometryConfig::default();
    for scan in &data.scans {
        let g = voxel_downsample(&scan.points, cfg.profiles.general().voxel_size).len();
        let d = voxel_downsample(&scan.points, cfg.profiles.degenerate().voxel_size).len();
        assert!(d >= g, "{d} < {g}");
    }
}

#[test]
fn spiral_stair_runs_without_failure() {
    let data = dataset(ScenePreset::SpiralStair, MotionPreset::Traverse, 40);
    let out = run(&OdometryConfig::default(), &data);
    assert_eq!(out.len(), 40);
    assert!(out.iter().all(|r| !r.flags.numerical_failure && r.pose.is_finite()));
}

#[test]
fn sinks_see_every_frame_in_order() {
    let data = dataset(ScenePreset::Room, MotionPreset::Traverse, 12);
    let mut seen: Vec<FrameResult> = Vec::new();
    let out = run_sequence(&OdometryConfig::default(), &data.scans, &data.imu, &mut [&mut seen]).unwrap();
    assert_eq!(seen, out);
    assert!(out.iter().enumerate().all(|(i, r)| r.frame == i));
}

#[test]
fn repeated_runs_are_identical() {
    let data = dataset(ScenePreset::Corridor, MotionPreset::Traverse, 15);
    let a = run(&OdometryConfig::default(), &data);
    let b = run(&OdometryConfig::default(), &data);
    assert_eq!(a, b);
}
