//! Marker scoring and trajectory error metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerPose {
    pub id: u32,
    pub position: Vector3<f64>,
}

/// Upper distance bounds of the scoring buckets, meters, with their points.
pub const SCORE_BUCKETS: [(f64, u32); 3] = [(0.01, 10), (0.10, 6), (1.00, 3)];

pub fn points_for_distance(distance: f64) -> u32 {
    SCORE_BUCKETS
        .iter()
        .find(|(bound, _)| distance <= *bound)
        .map_or(0, |&(_, points)| points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    #[default]
    None,
    /// Least-squares rotation and translation onto the markers.
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerScore {
    pub id: u32,
    pub distance: f64,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub markers: Vec<MarkerScore>,
    /// Markers within 1 cm, 10 cm, 100 cm, and beyond.
    pub bucket_counts: [usize; 4],
    pub total: u32,
    /// Transform applied to the trajectory before scoring.
    pub alignment: Option<Pose>,
}

impl ScoreReport {
    fn from_scores(markers: Vec<MarkerScore>, alignment: Option<Pose>) -> Self {
        let mut bucket_counts = [0; 4];
        for m in &markers {
            let bucket = match m.points {
                10 => 0,
                6 => 1,
                3 => 2,
                _ => 3,
            };
            bucket_counts[bucket] += 1;
        }
        let total = markers.iter().map(|m| m.points).sum();
        Self {
            markers,
            bucket_counts,
            total,
            alignment,
        }
    }
}

fn closest_index(positions: &[Vector3<f64>], target: &Vector3<f64>) -> (usize, f64) {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p - target).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty trajectory")
}

const MAX_ALIGN_ROUNDS: usize = 50;

/// Scores each marker by its distance to the closest trajectory position.
pub fn score_trajectory(
    traj: &[(f64, Pose)],
    markers: &[MarkerPose],
    alignment: Alignment,
) -> Result<ScoreReport> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty trajectory".into()));
    }
    if markers.is_empty() {
        return Ok(ScoreReport::default());
    }
    let mut positions: Vec<Vector3<f64>> = traj.iter().map(|(_, p)| p.translation).collect();
    let mut applied = None;
    if alignment == Alignment::Rigid {
        if markers.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "rigid alignment needs at least 3 markers, got {}",
                markers.len()
            )));
        }
        // alternate association and alignment until the association settles
        let original = positions.clone();
        let mut transform = Pose::identity();
        let mut assoc: Vec<usize> = Vec::new();
        for _ in 0..MAX_ALIGN_ROUNDS {
            let next: Vec<usize> = markers
                .iter()
                .map(|m| closest_index(&positions, &m.position).0)
                .collect();
            if next == assoc {
                break;
            }
            let pairs: Vec<_> = next
                .iter()
                .zip(markers)
                .map(|(&i, m)| (original[i], m.position))
                .collect();
            transform = umeyama_rigid(&pairs)?;
            positions = original.iter().map(|p| transform.transform_vector(p)).collect();
            assoc = next;
        }
        applied = Some(transform);
    }
    let scores = markers
        .iter()
        .map(|m| {
            let (_, distance) = closest_index(&positions, &m.position);
            MarkerScore {
                id: m.id,
                distance,
                points: points_for_distance(distance),
            }
        })
        .collect();
    Ok(ScoreReport::from_scores(scores, applied))
}

/// Rigid transform `T` minimizing `Σ |T·src − dst|²` over `(src, dst)` pairs.
pub fn umeyama_rigid(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Pose> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no point pairs to align".into()));
    }
    let n = pairs.len() as f64;
    let mu_src = pairs.iter().fold(Vector3::zeros(), |a, (s, _)| a + s) / n;
    let mu_dst = pairs.iter().fold(Vector3::zeros(), |a, (_, d)| a + d) / n;
    let cov = pairs.iter().fold(Matrix3::zeros(), |a, (s, d)| {
        a + (d - mu_dst) * (s - mu_src).transpose()
    }) / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("alignment SVD failed".into())),
    };
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let rotation = Rotation::from_unit_quaternion(nalgebra::UnitQuaternion::from_matrix(&r));
    let translation = mu_dst - rotation.rotate(&mu_src);
    Ok(Pose::new(rotation, translation))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryError {
    pub rms: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

/// Position error between poses with matching timestamps (within 1 µs).
pub fn absolute_trajectory_error(estimate: &[(f64, Pose)], truth: &[(f64, Pose)]) -> Result<TrajectoryError> {
    const TIME_TOL: f64 = 1e-6;
    let mut errors = Vec::with_capacity(estimate.len());
    for (t, pose) in estimate {
        let i = truth.partition_point(|(gt, _)| *gt < t - TIME_TOL);
        match truth.get(i) {
            Some((gt, gt_pose)) if (gt - t).abs() <= TIME_TOL => {
                errors.push((pose.translation - gt_pose.translation).norm())
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "no ground-truth pose at t = {t}"
                )))
            }
        }
    }
    if errors.is_empty() {
        return Err(Error::InvalidInput("no poses to compare".into()));
    }
    let n = errors.len() as f64;
    Ok(TrajectoryError {
        rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean: errors.iter().sum::<f64>() / n,
        max: errors.iter().copied().fold(0.0, f64::max),
        count: errors.len(),
    })
}
