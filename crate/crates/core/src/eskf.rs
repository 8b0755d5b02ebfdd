//! Iterated error-state Kalman filter.
//!
//! The error state is ordered `[δθ, δp, δv, δb_g, δb_a, δg]` (18 dims), with
//! the rotation error applied on the right: `R_true = R · exp(δθ)`.
//!
//! Forward propagation integrates one IMU interval at a time. Scans are
//! de-skewed by interpolating the pose history recorded during propagation,
//! then registered against the map with an iterated update whose measurement
//! is the point-to-plane distance of every scan point with a valid plane.

use nalgebra::{Matrix3, Matrix6, RowSVector, SMatrix, SVector, Vector3, Vector6};
use rayon::prelude::*;

use crate::degeneracy::ParamProfile;
use crate::error::{Error, Result};
use crate::geom::{skew, so3_exp, LidarScan, ImuSample, Point3, Pose, Rotation};
use crate::plane::{fit_plane, residual_jacobian, Correspondence};
use crate::voxel::VoxelMap;

pub const ERROR_DIM: usize = 18;
pub const IDX_ROT: usize = 0;
pub const IDX_POS: usize = 3;
pub const IDX_VEL: usize = 6;
pub const IDX_BG: usize = 9;
pub const IDX_BA: usize = 12;
pub const IDX_GRAV: usize = 15;

pub type ErrorVector = SVector<f64, ERROR_DIM>;
pub type ErrorRow = RowSVector<f64, ERROR_DIM>;
pub type ErrorCov = SMatrix<f64, ERROR_DIM, ERROR_DIM>;

pub const GRAVITY: f64 = 9.81;

/// Longest IMU interval accepted by [`forward_propagate`].
pub const MAX_PROPAGATION_DT: f64 = 0.1;

/// Fewer valid correspondences than this flags the update as degenerate.
pub const MIN_CORRESPONDENCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    /// Body to world.
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    /// World frame.
    pub gravity: Vector3<f64>,
    pub t: f64,
}

impl Default for NavState {
    fn default() -> Self {
        Self {
            rotation: Rotation::identity(),
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            bias_gyro: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
            t: 0.0,
        }
    }
}

impl NavState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }

    /// Applies an error-state correction.
    pub fn boxplus(&self, delta: &ErrorVector) -> NavState {
        let seg = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
        NavState {
            rotation: self.rotation.retract(&seg(IDX_ROT)),
            position: self.position + seg(IDX_POS),
            velocity: self.velocity + seg(IDX_VEL),
            bias_gyro: self.bias_gyro + seg(IDX_BG),
            bias_accel: self.bias_accel + seg(IDX_BA),
            gravity: self.gravity + seg(IDX_GRAV),
            t: self.t,
        }
    }

    /// Error state taking `base` to `self`, so `base.boxplus(&self.boxminus(base)) == self`.
    pub fn boxminus(&self, base: &NavState) -> ErrorVector {
        let mut out = ErrorVector::zeros();
        out.fixed_rows_mut::<3>(IDX_ROT)
            .copy_from(&base.rotation.local(&self.rotation));
        out.fixed_rows_mut::<3>(IDX_POS)
            .copy_from(&(self.position - base.position));
        out.fixed_rows_mut::<3>(IDX_VEL)
            .copy_from(&(self.velocity - base.velocity));
        out.fixed_rows_mut::<3>(IDX_BG)
            .copy_from(&(self.bias_gyro - base.bias_gyro));
        out.fixed_rows_mut::<3>(IDX_BA)
            .copy_from(&(self.bias_accel - base.bias_accel));
        out.fixed_rows_mut::<3>(IDX_GRAV)
            .copy_from(&(self.gravity - base.gravity));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.pose().is_finite()
            && [
                self.velocity,
                self.bias_gyro,
                self.bias_accel,
                self.gravity,
            ]
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Continuous-time IMU noise densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// rad/s/√Hz
    pub gyro_noise: f64,
    /// m/s²/√Hz
    pub accel_noise: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gyro_noise: 0.01,
            accel_noise: 0.1,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-3,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_noise,
            self.accel_noise,
            self.gyro_bias_walk,
            self.accel_bias_walk,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "noise parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Initial standard deviations of the error state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitPriors {
    pub rotation_std: f64,
    pub position_std: f64,
    pub velocity_std: f64,
    pub bias_gyro_std: f64,
    pub bias_accel_std: f64,
    /// Zero freezes gravity at its initial estimate.
    pub gravity_std: f64,
}

impl Default for InitPriors {
    fn default() -> Self {
        Self {
            rotation_std: 0.01,
            position_std: 0.001,
            velocity_std: 0.01,
            bias_gyro_std: 0.01,
            bias_accel_std: 0.05,
            gravity_std: 0.05,
        }
    }
}

impl InitPriors {
    pub fn covariance(&self) -> ErrorCov {
        let mut cov = ErrorCov::zeros();
        let blocks = [
            (IDX_ROT, self.rotation_std),
            (IDX_POS, self.position_std),
            (IDX_VEL, self.velocity_std),
            (IDX_BG, self.bias_gyro_std),
            (IDX_BA, self.bias_accel_std),
            (IDX_GRAV, self.gravity_std),
        ];
        for (idx, std) in blocks {
            for i in idx..idx + 3 {
                cov[(i, i)] = std * std;
            }
        }
        cov
    }
}

fn set_block(m: &mut ErrorCov, row: usize, col: usize, block: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(block);
}

pub fn symmetrize(cov: &mut ErrorCov) {
    let t = cov.transpose();
    *cov = (*cov + t) * 0.5;
}

/// Right Jacobian of SO(3).
fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() - k * 0.5 + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - k * ((1.0 - theta.cos()) / t2) + k * k * ((theta - theta.sin()) / (t2 * theta))
}

/// Error-state transition of [`forward_propagate`] over one interval.
pub(crate) fn transition_matrix(state: &NavState, imu: &ImuSample, dt: f64) -> ErrorCov {
    let accel = imu.accel - state.bias_accel;
    let rot_step = (imu.gyro - state.bias_gyro) * dt;
    let half = so3_exp(&(rot_step * 0.5));
    let r = state.rotation.matrix();
    let r_mid = r * half.matrix();

    // derivatives of the world-frame acceleration
    let d_theta = -r * skew(&half.rotate(&accel));
    let d_bg = r_mid * skew(&accel) * right_jacobian(&(rot_step * 0.5)) * (0.5 * dt);
    let d_ba = -r_mid;
    let d_g = Matrix3::identity();

    let half_dt2 = 0.5 * dt * dt;
    let mut f = ErrorCov::identity();
    set_block(&mut f, IDX_ROT, IDX_ROT, &so3_exp(&-rot_step).matrix());
    set_block(&mut f, IDX_ROT, IDX_BG, &(-right_jacobian(&rot_step) * dt));
    set_block(&mut f, IDX_POS, IDX_VEL, &(Matrix3::identity() * dt));
    for (col, d) in [(IDX_ROT, d_theta), (IDX_BG, d_bg), (IDX_BA, d_ba), (IDX_GRAV, d_g)] {
        set_block(&mut f, IDX_POS, col, &(d * half_dt2));
        set_block(&mut f, IDX_VEL, col, &(d * dt));
    }
    f
}

/// Integrates one IMU interval of length `dt`, holding `imu` constant over it.
pub fn forward_propagate(
    state: &NavState,
    cov: &ErrorCov,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseParams,
) -> Result<(NavState, ErrorCov)> {
    if !(dt > 0.0 && dt <= MAX_PROPAGATION_DT) {
        return Err(Error::PropagationGap {
            dt,
            max: MAX_PROPAGATION_DT,
        });
    }
    if !imu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite imu sample at t = {}",
            imu.t
        )));
    }

    let omega = imu.gyro - state.bias_gyro;
    let accel = imu.accel - state.bias_accel;
    let rot_step = omega * dt;
    // The specific force is rotated with the mid-interval attitude.
    let r_mid = state.rotation.retract(&(rot_step * 0.5)).matrix();
    let acc_world = r_mid * accel + state.gravity;

    let next = NavState {
        rotation: state.rotation.retract(&rot_step),
        position: state.position + state.velocity * dt + acc_world * (0.5 * dt * dt),
        velocity: state.velocity + acc_world * dt,
        t: state.t + dt,
        ..*state
    };
    let f = transition_matrix(state, imu, dt);

    let mut q = ErrorCov::zeros();
    let diag = [
        (IDX_ROT, noise.gyro_noise),
        (IDX_VEL, noise.accel_noise),
        (IDX_BG, noise.gyro_bias_walk),
        (IDX_BA, noise.accel_bias_walk),
    ];
    for (idx, density) in diag {
        for i in idx..idx + 3 {
            q[(i, i)] = density * density * dt;
        }
    }

    let mut next_cov = f * cov * f.transpose() + q;
    symmetrize(&mut next_cov);
    Ok((next, next_cov))
}

/// Pose at absolute time `t`, interpolated from a strictly increasing history.
pub fn interpolate_pose(history: &[(f64, Pose)], t: f64) -> Result<Pose> {
    const EPS: f64 = 1e-9;
    let coverage = |t| Error::UndistortionCoverage {
        t,
        start: history.first().map_or(f64::NAN, |h| h.0),
        end: history.last().map_or(f64::NAN, |h| h.0),
    };
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(coverage(t)),
    };
    if t < first.0 - EPS || t > last.0 + EPS {
        return Err(coverage(t));
    }
    if t <= first.0 {
        return Ok(first.1);
    }
    if t >= last.0 {
        return Ok(last.1);
    }
    let hi = history.partition_point(|(ht, _)| *ht <= t);
    let (t0, p0) = history[hi - 1];
    let (t1, p1) = history[hi];
    let s = (t - t0) / (t1 - t0);
    Ok(p0.interpolate(&p1, s))
}

/// Re-expresses every point in the body frame at the end of the scan.
///
/// `state_at_end` supplies the end pose; `history` supplies the body poses
/// over the sweep.
pub fn undistort_scan(
    scan: &LidarScan,
    state_at_end: &NavState,
    history: &[(f64, Pose)],
) -> Result<LidarScan> {
    if history.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidInput(
            "pose history timestamps must be strictly increasing".into(),
        ));
    }
    let end_inv = state_at_end.pose().inverse();
    let duration = scan.duration();
    let points = scan
        .points
        .iter()
        .map(|p| {
            let at_point = interpolate_pose(history, scan.t_start() + p.time_offset())?;
            let to_end = end_inv * at_point;
            Ok(p
                .with_coords(to_end.transform_vector(p.coords()))
                .with_time_offset(duration))
        })
        .collect::<Result<Vec<_>>>()?;
    LidarScan::new(points, scan.t_start(), scan.t_end())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOptions {
    /// Standard deviation of a point-to-plane residual, meters.
    pub lidar_noise: f64,
    pub max_iters: usize,
    /// Stop once the rotation+position correction norm falls below this.
    pub converge_eps: f64,
    /// Neighbors gathered per scan point.
    pub knn_k: usize,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self {
            lidar_noise: 0.02,
            max_iters: 4,
            converge_eps: 1e-4,
            knn_k: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    /// Map was empty; no update performed.
    pub bootstrap: bool,
    /// Valid correspondences found at each iteration.
    pub correspondences: Vec<usize>,
    /// Norm of the rotation+position correction at each iteration.
    pub corrections: Vec<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final iteration had fewer than [`MIN_CORRESPONDENCES`].
    pub degenerate_warning: bool,
}

impl UpdateStats {
    pub fn final_correspondences(&self) -> usize {
        self.correspondences.last().copied().unwrap_or(0)
    }
}

/// Result of [`iterated_update`].
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub state: NavState,
    pub cov: ErrorCov,
    pub stats: UpdateStats,
}

/// Valid point-to-plane correspondences of `scan_body` at `pose`.
///
/// Search runs in parallel; the result keeps scan order.
pub fn find_correspondences(
    scan_body: &[Point3],
    pose: &Pose,
    map: &VoxelMap,
    params: &ParamProfile,
    k: usize,
) -> Vec<Correspondence> {
    scan_body
        .par_iter()
        .map(|p| {
            let world = p.with_coords(pose.transform_vector(p.coords()));
            let neighbors: Vec<Point3> = map
                .knn_search(&world, k, params.search_radius)
                .into_iter()
                .map(|n| n.point)
                .collect();
            if neighbors.len() < 3 {
                return None;
            }
            let plane = fit_plane(&neighbors, params.residual_margin);
            plane.valid.then_some(Correspondence {
                scan_point: *p,
                world_point: world,
                plane,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Iterated measurement update against the map.
pub fn iterated_update(
    state: &NavState,
    cov: &ErrorCov,
    scan_body: &[Point3],
    map: &VoxelMap,
    params: &ParamProfile,
    opts: &UpdateOptions,
) -> Result<UpdateOutcome> {
    if scan_body.is_empty() {
        return Err(Error::InvalidInput("empty scan passed to update".into()));
    }
    if map.is_empty() {
        return Ok(UpdateOutcome {
            state: *state,
            cov: *cov,
            stats: UpdateStats {
                bootstrap: true,
                ..UpdateStats::default()
            },
        });
    }

    let inv_var = 1.0 / (opts.lidar_noise * opts.lidar_noise);
    let prior_p6 = cov.fixed_columns::<6>(0).into_owned();
    let prior_p11 = cov.fixed_view::<6, 6>(0, 0).into_owned();

    let mut stats = UpdateStats::default();
    let mut iterate = *state;
    let mut last_gain: Option<(Matrix6<f64>, Matrix6<f64>)> = None;

    for _ in 0..opts.max_iters.max(1) {
        let corrs = find_correspondences(scan_body, &iterate.pose(), map, params, opts.knn_k);

        let mut info = Matrix6::<f64>::zeros();
        let mut grad = Vector6::<f64>::zeros();
        let mut sq_sum = 0.0;
        for c in &corrs {
            let (r, row) = residual_jacobian(c, &iterate);
            let h = row.fixed_columns::<6>(0).transpose();
            info += h * h.transpose() * inv_var;
            grad += h * (r * inv_var);
            sq_sum += r * r;
        }
        stats.correspondences.push(corrs.len());
        stats.residual_rms = if corrs.is_empty() {
            0.0
        } else {
            (sq_sum / corrs.len() as f64).sqrt()
        };
        stats.iterations += 1;

        let delta = iterate.boxminus(state);
        let delta6 = delta.fixed_rows::<6>(0).into_owned();
        let s = Matrix6::identity() + info * prior_p11;
        let rhs = grad - info * delta6;
        let solved = s
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalFailure("singular innovation system".into()))?;
        let dx: ErrorVector = -delta - prior_p6 * solved;
        if !dx.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite kalman gain".into()));
        }
        iterate = iterate.boxplus(&dx);
        last_gain = Some((s, info));

        let step = dx.fixed_rows::<6>(0).norm();
        stats.corrections.push(step);
        if step < opts.converge_eps {
            stats.converged = true;
            break;
        }
    }

    // (I − K·H)·P = P − P₆ (I + A·P₁₁)⁻¹ A P₆ᵀ
    let mut post = *cov;
    if let Some((s, info)) = last_gain {
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("singular innovation system".into()))?;
        post -= prior_p6 * (s_inv * info) * prior_p6.transpose();
        symmetrize(&mut post);
    }
    if !post.iter().all(|v| v.is_finite()) || !iterate.is_finite() {
        return Err(Error::NumericalFailure("non-finite posterior".into()));
    }
    stats.degenerate_warning = stats.final_correspondences() < MIN_CORRESPONDENCES;

    Ok(UpdateOutcome {
        state: iterate,
        cov: post,
        stats,
    })
}

/// Default bound on the summed per-axis accelerometer variance at rest, (m/s²)².
pub const DEFAULT_REST_ACCEL_VARIANCE: f64 = 0.05;

/// Gravity, biases and covariance from a stationary IMU window.
///
/// The body frame at rest defines the world frame.
pub fn initialize_from_rest(
    samples: &[ImuSample],
    min_count: usize,
    max_accel_variance: f64,
    priors: &InitPriors,
) -> Result<(NavState, ErrorCov)> {
    if samples.len() < min_count.max(1) {
        return Err(Error::InvalidInput(format!(
            "need at least {min_count} rest samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean_gyro = samples.iter().fold(Vector3::zeros(), |a, s| a + s.gyro) / n;
    let mean_accel = samples.iter().fold(Vector3::zeros(), |a, s| a + s.accel) / n;
    let variance = samples
        .iter()
        .map(|s| (s.accel - mean_accel).norm_squared())
        .sum::<f64>()
        / n;
    if variance > max_accel_variance {
        return Err(Error::NotAtRest {
            variance,
            threshold: max_accel_variance,
        });
    }
    let norm = mean_accel.norm();
    if norm < 1e-3 {
        return Err(Error::InvalidInput(
            "accelerometer reads zero at rest; cannot find gravity".into(),
        ));
    }
    let gravity = -mean_accel * (GRAVITY / norm);
    let state = NavState {
        rotation: Rotation::identity(),
        position: Vector3::zeros(),
        velocity: Vector3::zeros(),
        bias_gyro: mean_gyro,
        bias_accel: mean_accel + gravity,
        gravity,
        t: samples[samples.len() - 1].t,
    };
    Ok((state, priors.covariance()))
}
