//! Frame-by-frame odometry: propagate, undistort, detect, register, map.

use crate::degeneracy::{
    detect_degeneracy, select_params, DegeneracyReport, DetectorConfig, Mode, ParamProfile, ProfilePair,
};
use crate::error::{Error, Result};
use crate::eskf::{
    forward_propagate, initialize_from_rest, iterated_update, undistort_scan, ErrorCov, InitPriors, NavState,
    NoiseParams, UpdateOptions, UpdateStats, DEFAULT_REST_ACCEL_VARIANCE, MAX_PROPAGATION_DT,
};
use crate::geom::{transform_point, ImuSample, LidarScan, Pose};
use crate::voxel::{voxel_downsample, MapConfig, VoxelMap};

/// Stationary-start requirements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub min_count: usize,
    pub max_accel_variance: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            min_count: 100,
            max_accel_variance: DEFAULT_REST_ACCEL_VARIANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryConfig {
    pub profiles: ProfilePair,
    pub detector: DetectorConfig,
    pub noise: NoiseParams,
    pub update: UpdateOptions,
    /// LiDAR frame to body (IMU) frame.
    pub extrinsic: Pose,
    pub map: MapConfig,
    pub init: InitConfig,
    pub priors: InitPriors,
    /// When false, every frame uses the general profile.
    pub adaptive_enabled: bool,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            profiles: ProfilePair::default(),
            detector: DetectorConfig::default(),
            noise: NoiseParams::default(),
            update: UpdateOptions::default(),
            extrinsic: Pose::identity(),
            map: MapConfig::default(),
            init: InitConfig::default(),
            priors: InitPriors::default(),
            adaptive_enabled: true,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<()> {
        ProfilePair::new(*self.profiles.general(), *self.profiles.degenerate())?;
        self.detector.validate()?;
        self.noise.validate()?;
        let u = &self.update;
        if !(u.lidar_noise.is_finite() && u.lidar_noise > 0.0)
            || u.max_iters == 0
            || !(u.converge_eps.is_finite() && u.converge_eps > 0.0)
            || u.knn_k < 3
        {
            return Err(Error::Config(format!("invalid update options {u:?}")));
        }
        let m = &self.map;
        if !(m.cell_size.is_finite() && m.cell_size > 0.0)
            || !(m.min_spacing.is_finite() && m.min_spacing >= 0.0)
            || m.capacity_per_cell == 0
            || m.max_cells == 0
        {
            return Err(Error::Config(format!("invalid map config {m:?}")));
        }
        if !self.extrinsic.is_finite() {
            return Err(Error::Config("extrinsic must be finite".into()));
        }
        if !(self.init.max_accel_variance > 0.0) {
            return Err(Error::Config("init.max_accel_variance must be positive".into()));
        }
        let p = &self.priors;
        if [p.rotation_std, p.position_std, p.velocity_std, p.bias_gyro_std, p.bias_accel_std, p.gravity_std]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config(format!("invalid priors {p:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameFlags {
    /// First frame; the map was empty.
    pub bootstrap: bool,
    /// Too few correspondences in the final update iteration.
    pub degenerate_warning: bool,
    /// The update failed; the pose is the propagated prior.
    pub numerical_failure: bool,
    /// No points survived preprocessing; no update was run.
    pub empty_scan: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    /// Scan end time.
    pub t: f64,
    /// Body pose at `t`.
    pub pose: Pose,
    pub report: DegeneracyReport,
    /// Profile used for this frame's registration.
    pub profile: ParamProfile,
    /// Points registered against the map.
    pub registered_count: usize,
    pub stats: UpdateStats,
    pub flags: FrameFlags,
}

/// Receives every processed frame, in order.
pub trait FrameSink {
    fn on_frame(&mut self, frame: &FrameResult) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl FrameSink for Vec<FrameResult> {
    fn on_frame(&mut self, frame: &FrameResult) -> Result<()> {
        self.push(frame.clone());
        Ok(())
    }
}

/// Integrates from `state.t` to `t_end` and records the pose after each step.
///
/// `prev` is the latest sample at or before `state.t`. Each interval uses the
/// mean of the two bounding samples, linearly interpolated at the interval
/// ends. Returns the last sample at or before `t_end`.
pub fn propagate_to(
    state: &NavState,
    cov: &ErrorCov,
    prev: ImuSample,
    samples: &[ImuSample],
    t_end: f64,
    noise: &NoiseParams,
    history: &mut Vec<(f64, Pose)>,
) -> Result<(NavState, ErrorCov, ImuSample)> {
    let mut state = *state;
    let mut cov = *cov;
    let mut prev = prev;
    history.push((state.t, state.pose()));

    let mut step = |state: &mut NavState, cov: &mut ErrorCov, a: &ImuSample, b: &ImuSample, t1: f64| -> Result<()> {
        let t0 = state.t;
        if t1 - t0 > MAX_PROPAGATION_DT {
            return Err(Error::ImuCoverage { t: t0, gap: t1 - t0 });
        }
        let lo = a.lerp(b, t0);
        let hi = a.lerp(b, t1);
        let mid = ImuSample {
            t: t0,
            gyro: (lo.gyro + hi.gyro) * 0.5,
            accel: (lo.accel + hi.accel) * 0.5,
        };
        let (s, c) = forward_propagate(state, cov, &mid, t1 - t0, noise)?;
        // pin the clock to the sample grid to avoid drift from summed steps
        *state = NavState { t: t1, ..s };
        *cov = c;
        history.push((t1, state.pose()));
        Ok(())
    };

    for s in samples {
        if s.t <= state.t {
            if s.t >= prev.t {
                prev = *s;
            }
            continue;
        }
        let t1 = s.t.min(t_end);
        if t1 > state.t {
            step(&mut state, &mut cov, &prev, s, t1)?;
        }
        if s.t > t_end {
            break;
        }
        prev = *s;
    }
    if state.t < t_end {
        // no sample beyond the scan end: hold the last one
        let held = ImuSample { t: state.t, ..prev };
        step(&mut state, &mut cov, &held, &held, t_end)?;
    }
    Ok((state, cov, prev))
}

/// Odometry state carried across frames.
#[derive(Debug, Clone)]
pub struct Engine {
    config: OdometryConfig,
    state: NavState,
    cov: ErrorCov,
    map: VoxelMap,
    last_imu: ImuSample,
    report: DegeneracyReport,
    frame: usize,
}

impl Engine {
    /// Starts from an explicit state. `last_imu` is the latest sample at or
    /// before `state.t`.
    pub fn new(config: OdometryConfig, state: NavState, cov: ErrorCov, last_imu: ImuSample) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            map: VoxelMap::new(config.map),
            config,
            state,
            cov,
            last_imu,
            report: DegeneracyReport::default(),
            frame: 0,
        })
    }

    /// Initializes gravity, biases and covariance from stationary samples.
    pub fn from_rest(config: OdometryConfig, rest: &[ImuSample]) -> Result<Self> {
        config.validate()?;
        let (state, cov) = initialize_from_rest(
            rest,
            config.init.min_count,
            config.init.max_accel_variance,
            &config.priors,
        )?;
        let last = *rest.last().expect("initialize_from_rest checks the count");
        Self::new(config, state, cov, last)
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.config
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    pub fn covariance(&self) -> &ErrorCov {
        &self.cov
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    /// Processes one scan. `imu_since_last` holds the samples after the
    /// previous scan end up to this scan's end, optionally followed by the
    /// first sample past it for boundary interpolation.
    pub fn process_frame(&mut self, scan: &LidarScan, imu_since_last: &[ImuSample]) -> Result<FrameResult> {
        if scan.t_end() <= self.state.t {
            return Err(Error::InvalidInput(format!(
                "scan ending at {} is not after the filter time {}",
                scan.t_end(),
                self.state.t
            )));
        }
        let cfg = self.config;

        let mut history = Vec::new();
        let (prior, prior_cov, last_imu) = propagate_to(
            &self.state,
            &self.cov,
            self.last_imu,
            imu_since_last,
            scan.t_end(),
            &cfg.noise,
            &mut history,
        )?;

        let body_points = scan
            .points
            .iter()
            .map(|p| transform_point(&cfg.extrinsic, p))
            .collect();
        let body_scan = LidarScan::new(body_points, scan.t_start(), scan.t_end())?;
        let undistorted = undistort_scan(&body_scan, &prior, &history)?;

        let general = *cfg.profiles.general();
        let general_cloud = voxel_downsample(&undistorted.points, general.voxel_size);
        let mut report = detect_degeneracy(&general_cloud, &cfg.detector, &self.report);
        if !cfg.adaptive_enabled {
            report.decision = Mode::General;
            report.opposing_streak = 0;
        }
        let profile = select_params(&report, &cfg.profiles);
        let cloud = match profile.mode {
            Mode::General => general_cloud,
            Mode::Degenerate => voxel_downsample(&undistorted.points, profile.voxel_size),
        };

        let mut flags = FrameFlags::default();
        let (state, cov, stats) = if cloud.is_empty() {
            flags.empty_scan = true;
            (prior, prior_cov, UpdateStats::default())
        } else {
            match iterated_update(&prior, &prior_cov, &cloud, &self.map, &profile, &cfg.update) {
                Ok(out) => (out.state, out.cov, out.stats),
                Err(Error::NumericalFailure(_)) => {
                    flags.numerical_failure = true;
                    (prior, prior_cov, UpdateStats::default())
                }
                Err(e) => return Err(e),
            }
        };
        flags.bootstrap = stats.bootstrap;
        flags.degenerate_warning = stats.degenerate_warning;

        let pose = state.pose();
        let world: Vec<_> = cloud.iter().map(|p| transform_point(&pose, p)).collect();
        self.map.insert_scan(&world);

        self.state = state;
        self.cov = cov;
        self.last_imu = last_imu;
        self.report = report;
        let result = FrameResult {
            frame: self.frame,
            t: state.t,
            pose,
            report,
            profile,
            registered_count: cloud.len(),
            stats,
            flags,
        };
        self.frame += 1;
        Ok(result)
    }
}

fn check_sorted(scans: &[LidarScan], imu: &[ImuSample]) -> Result<()> {
    if let Some(i) = scans.windows(2).position(|w| w[1].t_start() < w[0].t_start()) {
        return Err(Error::InvalidInput(format!(
            "scan {} starts before scan {}",
            i + 1,
            i
        )));
    }
    if let Some(i) = imu.windows(2).position(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidInput(format!(
            "imu sample {} is not after sample {}",
            i + 1,
            i
        )));
    }
    Ok(())
}

/// Runs the whole recording. The filter initializes from the IMU samples up
/// to the first scan start, which must be stationary.
pub fn run_sequence(
    config: &OdometryConfig,
    scans: &[LidarScan],
    imu: &[ImuSample],
    sinks: &mut [&mut dyn FrameSink],
) -> Result<Vec<FrameResult>> {
    config.validate()?;
    check_sorted(scans, imu)?;
    let mut results = Vec::with_capacity(scans.len());
    let Some(first) = scans.first() else {
        for sink in sinks.iter_mut() {
            sink.finish()?;
        }
        return Ok(results);
    };

    let rest_end = imu.partition_point(|s| s.t <= first.t_start());
    let mut engine = Engine::from_rest(*config, &imu[..rest_end])?;

    for scan in scans {
        let lo = imu.partition_point(|s| s.t <= engine.state().t);
        let hi = imu.partition_point(|s| s.t <= scan.t_end());
        let window = &imu[lo..(hi + 1).min(imu.len()).max(lo)];
        let result = engine.process_frame(scan, window)?;
        for sink in sinks.iter_mut() {
            sink.on_frame(&result)?;
        }
        results.push(result);
    }
    for sink in sinks.iter_mut() {
        sink.finish()?;
    }
    Ok(results)
}
