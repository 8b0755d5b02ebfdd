//! Plane fitting over map neighborhoods and the point-to-plane measurement.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::eskf::{ErrorRow, NavState, IDX_POS, IDX_ROT};
use crate::geom::{skew, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    /// Unit normal when `valid`; zero for degenerate neighborhoods.
    pub normal: Vector3<f64>,
    /// Offset such that the plane is `normal·p + d = 0`.
    pub d: f64,
    pub valid: bool,
    /// Neighbors within the residual margin.
    pub inlier_count: usize,
}

impl PlaneFit {
    fn invalid() -> Self {
        Self {
            normal: Vector3::zeros(),
            d: 0.0,
            valid: false,
            inlier_count: 0,
        }
    }
}

/// A scan point paired with the map plane it is registered against.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub scan_point: Point3,
    pub world_point: Point3,
    pub plane: PlaneFit,
}

/// Ratio of the middle to the largest covariance eigenvalue below which the
/// neighborhood is treated as a line (or a point) regardless of the margin.
const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares plane through `neighbors`.
///
/// The fit is valid only if every neighbor lies within `residual_margin` of
/// the plane. Neighbors whose RMS spread off their principal axis is within
/// the margin count as collinear: every plane through that line would pass
/// the margin test, so the normal is not determined. The normal is signed so
/// that its largest-magnitude component is positive.
pub fn fit_plane(neighbors: &[Point3], residual_margin: f64) -> PlaneFit {
    if neighbors.len() < 3 {
        return PlaneFit::invalid();
    }
    let n = neighbors.len() as f64;
    let centroid = neighbors
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords())
        / n;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let c = p.coords() - centroid;
        cov += c * c.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (
        order[0],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(largest > 0.0) || middle <= RANK_TOLERANCE * largest || middle.sqrt() <= residual_margin {
        return PlaneFit::invalid();
    }

    let mut normal = eig.eigenvectors.column(smallest).normalize();
    let dominant = normal.iamax();
    if normal[dominant] < 0.0 {
        normal = -normal;
    }
    let d = -normal.dot(&centroid);
    let inlier_count = neighbors
        .iter()
        .filter(|p| (normal.dot(p.coords()) + d).abs() <= residual_margin)
        .count();
    PlaneFit {
        normal,
        d,
        valid: inlier_count == neighbors.len(),
        inlier_count,
    }
}

/// Signed distance `normal·p + d`.
pub fn point_to_plane_distance(p: &Point3, plane: &PlaneFit) -> f64 {
    plane.normal.dot(p.coords()) + plane.d
}

/// Residual of a correspondence at `state` and its derivative with respect to
/// the 18-dimensional error state.
///
/// With `p_w = R·exp(δθ)·p_b + t`, only the rotation block
/// `−nᵀ·R·[p_b]×` and the position block `nᵀ` are non-zero.
pub fn residual_jacobian(c: &Correspondence, state: &NavState) -> (f64, ErrorRow) {
    let p_body = c.scan_point.coords();
    let n = &c.plane.normal;
    let world = state.rotation.rotate(p_body) + state.position;
    let residual = n.dot(&world) + c.plane.d;

    let mut row = ErrorRow::zeros();
    let rot = -(n.transpose() * state.rotation.matrix() * skew(p_body));
    row.fixed_view_mut::<1, 3>(0, IDX_ROT).copy_from(&rot);
    row.fixed_view_mut::<1, 3>(0, IDX_POS)
        .copy_from(&n.transpose());
    (residual, row)
}
