//! Seeded synthetic scenes, LiDAR sweeps and IMU streams with exact ground
//! truth.
//!
//! Scenes are unions of analytic surfaces (parallelograms, vertical
//! cylinders and horizontal annular sectors). They can be sampled into point
//! clouds or ray cast by a spinning multi-beam sensor model.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eskf::GRAVITY;
use crate::eval::MarkerPose;
use crate::geom::{ImuSample, LidarScan, Point3, Pose, Rotation};

/// Radius of the central column of a spiral staircase, meters.
pub const NEWEL_RADIUS: f64 = 0.2;
/// Treads per full turn of a spiral staircase.
pub const STEPS_PER_TURN: usize = 16;
/// Clear height above the top tread of a spiral staircase, meters.
pub const STAIR_HEADROOM: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// `origin + a·u + b·v` for `a, b ∈ [0, 1]`, with `u ⊥ v`.
    Rect {
        origin: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
    },
    /// Vertical cylinder wall.
    Cylinder {
        center: Vector2<f64>,
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Horizontal ring sector `r ∈ [r_inner, r_outer]`,
    /// `θ ∈ [theta_start, theta_start + sweep]`.
    Annulus {
        center: Vector2<f64>,
        z: f64,
        r_inner: f64,
        r_outer: f64,
        theta_start: f64,
        sweep: f64,
    },
}

fn angle_in_sweep(theta: f64, start: f64, sweep: f64) -> bool {
    sweep >= TAU || (theta - start).rem_euclid(TAU) <= sweep
}

impl Surface {
    pub fn rect(origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>) -> Self {
        debug_assert!(u.dot(&v).abs() <= 1e-9 * u.norm() * v.norm());
        Surface::Rect { origin, u, v }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Surface::Rect { u, v, .. } => u.norm() * v.norm(),
            Surface::Cylinder {
                radius, z_min, z_max, ..
            } => TAU * radius * (z_max - z_min),
            Surface::Annulus {
                r_inner,
                r_outer,
                sweep,
                ..
            } => 0.5 * sweep * (r_outer * r_outer - r_inner * r_inner),
        }
    }

    /// Uniform sample over the surface.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        match *self {
            Surface::Rect { origin, u, v } => {
                origin + u * rng.random_range(0.0..=1.0) + v * rng.random_range(0.0..=1.0)
            }
            Surface::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let theta = rng.random_range(0.0..TAU);
                Vector3::new(
                    center.x + radius * theta.cos(),
                    center.y + radius * theta.sin(),
                    rng.random_range(z_min..=z_max),
                )
            }
            Surface::Annulus {
                center,
                z,
                r_inner,
                r_outer,
                theta_start,
                sweep,
            } => {
                let r = rng
                    .random_range(r_inner * r_inner..=r_outer * r_outer)
                    .sqrt();
                let theta = theta_start + rng.random_range(0.0..=sweep);
                Vector3::new(center.x + r * theta.cos(), center.y + r * theta.sin(), z)
            }
        }
    }

    /// Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Surface::Rect { origin, u, v } => {
                let q = p - origin;
                let a = (q.dot(&u) / u.norm_squared()).clamp(0.0, 1.0);
                let b = (q.dot(&v) / v.norm_squared()).clamp(0.0, 1.0);
                (q - u * a - v * b).norm()
            }
            Surface::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let radial = (p.xy() - center).norm() - radius;
                let dz = (z_min - p.z).max(p.z - z_max).max(0.0);
                radial.hypot(dz)
            }
            Surface::Annulus {
                center,
                z,
                r_inner,
                r_outer,
                theta_start,
                sweep,
            } => {
                let rel = p.xy() - center;
                let r = rel.norm();
                let theta = rel.y.atan2(rel.x);
                let (r_c, theta_c) = if angle_in_sweep(theta, theta_start, sweep) {
                    (r.clamp(r_inner, r_outer), theta)
                } else {
                    // nearest of the two radial edges
                    let end = theta_start + sweep;
                    let d_start = (theta - theta_start).rem_euclid(TAU);
                    let d_end = (end - theta).rem_euclid(TAU);
                    let edge = if d_start.min(TAU - d_start) <= d_end.min(TAU - d_end) {
                        theta_start
                    } else {
                        end
                    };
                    let along = rel.dot(&Vector2::new(edge.cos(), edge.sin()));
                    (along.clamp(r_inner, r_outer), edge)
                };
                let closest = Vector3::new(
                    center.x + r_c * theta_c.cos(),
                    center.y + r_c * theta_c.sin(),
                    z,
                );
                (p - closest).norm()
            }
        }
    }

    /// Unit normal at a point on the surface; orientation unspecified.
    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match *self {
            Surface::Rect { u, v, .. } => u.cross(&v).normalize(),
            Surface::Cylinder { center, .. } => {
                let radial = p.xy() - center;
                Vector3::new(radial.x, radial.y, 0.0).normalize()
            }
            Surface::Annulus { .. } => Vector3::z(),
        }
    }

    /// Smallest ray parameter `s > min_s` at which `origin + s·dir` hits the
    /// surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, min_s: f64) -> Option<f64> {
        match *self {
            Surface::Rect { origin: o, u, v } => {
                let n = u.cross(&v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = n.dot(&(o - origin)) / denom;
                if s <= min_s {
                    return None;
                }
                let q = origin + dir * s - o;
                let a = q.dot(&u) / u.norm_squared();
                let b = q.dot(&v) / v.norm_squared();
                ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(s)
            }
            Surface::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let o = origin.xy() - center;
                let d = dir.xy();
                let a = d.norm_squared();
                if a < 1e-18 {
                    return None;
                }
                let b = o.dot(&d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [(-b - root) / a, (-b + root) / a].into_iter().find(|&s| {
                    let z = origin.z + dir.z * s;
                    s > min_s && z >= z_min && z <= z_max
                })
            }
            Surface::Annulus {
                center,
                z,
                r_inner,
                r_outer,
                theta_start,
                sweep,
            } => {
                if dir.z.abs() < 1e-12 {
                    return None;
                }
                let s = (z - origin.z) / dir.z;
                if s <= min_s {
                    return None;
                }
                let rel = (origin + dir * s).xy() - center;
                let r = rel.norm();
                (r >= r_inner && r <= r_outer && angle_in_sweep(rel.y.atan2(rel.x), theta_start, sweep))
                    .then_some(s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneKind {
    /// Closed box `[-w/2, w/2] × [-l/2, l/2] × [0, h]`.
    Room { width: f64, length: f64, height: f64 },
    /// Open-ended corridor along +x from the origin, walls at `y = ±width/2`.
    Corridor { width: f64, height: f64, length: f64 },
    /// Staircase winding counter-clockwise up around the z axis inside a
    /// cylindrical wall of `radius`. `wall_offset` is the clearance between
    /// the wall and the walking line.
    SpiralStair {
        radius: f64,
        pitch: f64,
        turns: f64,
        wall_offset: f64,
    },
    /// Two rooms joined by a corridor through doorways in their facing walls.
    /// The corridor spans `x ∈ [0, corridor_length]`.
    RoomCorridorRoom {
        room_width: f64,
        room_length: f64,
        room_height: f64,
        corridor_width: f64,
        corridor_height: f64,
        corridor_length: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Surface samples per square meter.
    pub density: f64,
    /// Isotropic Gaussian noise added to samples, meters.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match self.kind {
            SceneKind::Room {
                width,
                length,
                height,
            } => vec![width, length, height],
            SceneKind::Corridor {
                width,
                height,
                length,
            } => vec![width, height, length],
            SceneKind::SpiralStair {
                radius,
                pitch,
                turns,
                wall_offset,
            } => {
                if !(radius > NEWEL_RADIUS + wall_offset) {
                    return Err(Error::InvalidInput(format!(
                        "stair radius {radius} leaves no walking line at offset {wall_offset}"
                    )));
                }
                vec![radius, pitch, turns, wall_offset]
            }
            SceneKind::RoomCorridorRoom {
                room_width,
                room_length,
                room_height,
                corridor_width,
                corridor_height,
                corridor_length,
            } => {
                if corridor_width >= room_length || corridor_height >= room_height {
                    return Err(Error::InvalidInput(
                        "corridor cross-section must fit inside the room walls".into(),
                    ));
                }
                vec![
                    room_width,
                    room_length,
                    room_height,
                    corridor_width,
                    corridor_height,
                    corridor_length,
                ]
            }
        };
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "scene dimensions must be positive: {:?}",
                self.kind
            )));
        }
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::InvalidInput(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Axis-aligned wall in the plane `x = x0`, spanning `y ∈ [y0, y1]`,
/// `z ∈ [z0, z1]`.
fn wall_x(x0: f64, y0: f64, y1: f64, z0: f64, z1: f64) -> Surface {
    Surface::rect(
        Vector3::new(x0, y0, z0),
        Vector3::new(0.0, y1 - y0, 0.0),
        Vector3::new(0.0, 0.0, z1 - z0),
    )
}

fn wall_y(y0: f64, x0: f64, x1: f64, z0: f64, z1: f64) -> Surface {
    Surface::rect(
        Vector3::new(x0, y0, z0),
        Vector3::new(x1 - x0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, z1 - z0),
    )
}

fn slab_z(z0: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> Surface {
    Surface::rect(
        Vector3::new(x0, y0, z0),
        Vector3::new(x1 - x0, 0.0, 0.0),
        Vector3::new(0.0, y1 - y0, 0.0),
    )
}

/// `x = x0` wall of a room with a centered doorway of the given size cut out.
fn wall_with_door(x0: f64, half_len: f64, height: f64, door_half: f64, door_h: f64) -> Vec<Surface> {
    vec![
        wall_x(x0, -half_len, -door_half, 0.0, height),
        wall_x(x0, door_half, half_len, 0.0, height),
        wall_x(x0, -door_half, door_half, door_h, height),
    ]
}

/// Six faces of an axis-aligned box spanning `x ∈ [x0, x1]`, `|y| ≤ half_l`,
/// `z ∈ [0, h]`, with optional doorways in the `x0` and `x1` walls.
fn room(x0: f64, x1: f64, half_l: f64, h: f64, door: Option<(f64, f64)>, door_at: [bool; 2]) -> Vec<Surface> {
    let mut s = vec![
        slab_z(0.0, x0, x1, -half_l, half_l),
        slab_z(h, x0, x1, -half_l, half_l),
        wall_y(-half_l, x0, x1, 0.0, h),
        wall_y(half_l, x0, x1, 0.0, h),
    ];
    for (x, has_door) in [(x0, door_at[0]), (x1, door_at[1])] {
        match door {
            Some((half_w, door_h)) if has_door => {
                s.extend(wall_with_door(x, half_l, h, half_w, door_h))
            }
            _ => s.push(wall_x(x, -half_l, half_l, 0.0, h)),
        }
    }
    s
}

/// Analytic scene geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
}

impl Scene {
    pub fn build(kind: &SceneKind) -> Scene {
        let surfaces = match *kind {
            SceneKind::Room {
                width,
                length,
                height,
            } => room(-width / 2.0, width / 2.0, length / 2.0, height, None, [false; 2]),
            SceneKind::Corridor {
                width,
                height,
                length,
            } => {
                let hw = width / 2.0;
                vec![
                    slab_z(0.0, 0.0, length, -hw, hw),
                    slab_z(height, 0.0, length, -hw, hw),
                    wall_y(-hw, 0.0, length, 0.0, height),
                    wall_y(hw, 0.0, length, 0.0, height),
                ]
            }
            SceneKind::SpiralStair {
                radius,
                pitch,
                turns,
                ..
            } => {
                let steps = (turns * STEPS_PER_TURN as f64).ceil() as usize;
                let rise = pitch / STEPS_PER_TURN as f64;
                let step_angle = TAU / STEPS_PER_TURN as f64;
                let top = steps as f64 * rise + STAIR_HEADROOM;
                let mut s = vec![
                    Surface::Cylinder {
                        center: Vector2::zeros(),
                        radius,
                        z_min: 0.0,
                        z_max: top,
                    },
                    Surface::Cylinder {
                        center: Vector2::zeros(),
                        radius: NEWEL_RADIUS,
                        z_min: 0.0,
                        z_max: top,
                    },
                ];
                for k in 0..steps {
                    let theta = k as f64 * step_angle;
                    let z = k as f64 * rise;
                    s.push(Surface::Annulus {
                        center: Vector2::zeros(),
                        z,
                        r_inner: NEWEL_RADIUS,
                        r_outer: radius,
                        theta_start: theta,
                        sweep: step_angle,
                    });
                    if k > 0 {
                        let dir = Vector3::new(theta.cos(), theta.sin(), 0.0);
                        s.push(Surface::rect(
                            dir * NEWEL_RADIUS + Vector3::new(0.0, 0.0, z - rise),
                            dir * (radius - NEWEL_RADIUS),
                            Vector3::new(0.0, 0.0, rise),
                        ));
                    }
                }
                s
            }
            SceneKind::RoomCorridorRoom {
                room_width,
                room_length,
                room_height,
                corridor_width,
                corridor_height,
                corridor_length,
            } => {
                let hw = corridor_width / 2.0;
                let door = Some((hw, corridor_height));
                let hl = room_length / 2.0;
                let mut s = room(-room_width, 0.0, hl, room_height, door, [false, true]);
                s.extend(room(
                    corridor_length,
                    corridor_length + room_width,
                    hl,
                    room_height,
                    door,
                    [true, false],
                ));
                s.extend([
                    slab_z(0.0, 0.0, corridor_length, -hw, hw),
                    slab_z(corridor_height, 0.0, corridor_length, -hw, hw),
                    wall_y(-hw, 0.0, corridor_length, 0.0, corridor_height),
                    wall_y(hw, 0.0, corridor_length, 0.0, corridor_height),
                ]);
                s
            }
        };
        Scene { surfaces }
    }

    pub fn area(&self) -> f64 {
        self.surfaces.iter().map(Surface::area).sum()
    }

    /// Distance from `p` to the nearest surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.surfaces
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Range to the first surface along a unit ray, if within `max_range`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, min_range: f64, max_range: f64) -> Option<f64> {
        self.cast_hit(origin, dir, min_range, max_range).map(|(range, _)| range)
    }

    /// Like [`Scene::cast`], also returning the surface normal at the hit.
    pub fn cast_hit(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        min_range: f64,
        max_range: f64,
    ) -> Option<(f64, Vector3<f64>)> {
        self.surfaces
            .iter()
            .filter_map(|s| s.intersect(origin, dir, min_range).map(|r| (r, s)))
            .filter(|&(r, _)| r <= max_range)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(r, s)| (r, s.normal_at(&(origin + dir * r))))
    }
}

/// Surface samples of the scene, `round(density · area)` per surface, with
/// Gaussian noise.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<Point3>> {
    spec.validate()?;
    let scene = Scene::build(&spec.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let mut points = Vec::new();
    for surface in &scene.surfaces {
        let n = (spec.density * surface.area()).round() as usize;
        for _ in 0..n {
            let p = surface.sample(&mut rng);
            let jitter = Vector3::from_fn(|_, _| noise.sample(&mut rng));
            points.push(Point3::from_coords(p + jitter));
        }
    }
    Ok(points)
}

/// Range-gated point selection: scene point `i` of `n` is emitted at
/// `t_start + duration·i/n` and kept if within `max_range` of the sensor at
/// that instant.
pub fn simulate_scan(
    scene: &[Point3],
    pose_fn: impl Fn(f64) -> Pose,
    t_start: f64,
    duration: f64,
    max_range: f64,
) -> Result<LidarScan> {
    let n = scene.len().max(1) as f64;
    let points = scene
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let offset = duration * i as f64 / n;
            let pose = pose_fn(t_start + offset);
            let rel = p.coords() - pose.translation;
            (rel.norm() <= max_range).then(|| {
                Point3::from_coords(pose.rotation.inverse_rotate(&rel)).with_time_offset(offset)
            })
        })
        .collect();
    LidarScan::new(points, t_start, t_start + duration)
}

/// Spinning multi-beam LiDAR with evenly spaced rings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    pub rings: usize,
    /// Firing columns per revolution; one revolution per scan.
    pub columns: usize,
    pub min_elevation: f64,
    pub max_elevation: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Returns whose angle between beam and surface normal exceeds this are
    /// lost, radians. `π/2` keeps everything.
    pub max_incidence: f64,
    /// Gaussian range noise, meters.
    pub range_sigma: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            rings: 32,
            columns: 1000,
            min_elevation: (-16.0f64).to_radians(),
            max_elevation: 15.0f64.to_radians(),
            min_range: 0.3,
            max_range: 60.0,
            max_incidence: 75.0f64.to_radians(),
            range_sigma: 0.02,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rings > 0
            && self.columns > 0
            && self.min_elevation.is_finite()
            && self.max_elevation.is_finite()
            && self.min_elevation <= self.max_elevation
            && self.min_range.is_finite()
            && self.min_range >= 0.0
            && self.max_range >= 0.0
            && self.max_incidence > 0.0
            && self.max_incidence <= FRAC_PI_2
            && self.range_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid lidar model {self:?}")))
        }
    }

    fn beam(&self, ring: usize, column: usize) -> Vector3<f64> {
        let elevation = if self.rings == 1 {
            0.0
        } else {
            self.min_elevation
                + (self.max_elevation - self.min_elevation) * ring as f64 / (self.rings - 1) as f64
        };
        let azimuth = -PI + TAU * column as f64 / self.columns as f64;
        Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        )
    }
}

/// Ray casts one sweep. Column `c` fires at `t_start + duration·c/columns`
/// from the pose at that instant; returns are expressed in that body frame.
pub fn simulate_lidar(
    scene: &Scene,
    model: &LidarModel,
    pose_fn: impl Fn(f64) -> Pose + Sync,
    t_start: f64,
    duration: f64,
    seed: u64,
) -> Result<LidarScan> {
    model.validate()?;
    let min_cos = model.max_incidence.cos().max(0.0);
    let hits: Vec<(f64, Vector3<f64>, f64)> = (0..model.columns)
        .into_par_iter()
        .flat_map_iter(|c| {
            let offset = duration * c as f64 / model.columns as f64;
            let pose = pose_fn(t_start + offset);
            (0..model.rings).filter_map(move |ring| {
                let beam = model.beam(ring, c);
                let dir = pose.rotation.rotate(&beam);
                scene
                    .cast_hit(&pose.translation, &dir, model.min_range, model.max_range)
                    .filter(|(_, normal)| normal.dot(&dir).abs() >= min_cos)
                    .map(|(range, _)| (offset, beam, range))
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, model.range_sigma)
        .map_err(|e| Error::InvalidInput(format!("range noise: {e}")))?;
    let points = hits
        .into_iter()
        .map(|(offset, beam, range)| {
            let r = range + noise.sample(&mut rng);
            Point3::from_coords(beam * r)
                .with_intensity((100.0 / (1.0 + range)) as f32)
                .with_time_offset(offset)
        })
        .collect();
    LidarScan::new(points, t_start, t_start + duration)
}

/// Cubic spline with zero slope at both ends.
#[derive(Debug, Clone, PartialEq)]
struct ClampedSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl ClampedSpline {
    fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        debug_assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

        // tridiagonal system for the knot second derivatives
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = 2.0 * h[0];
        upper[0] = h[0];
        rhs[0] = 6.0 * slope[0];
        for i in 1..n - 1 {
            lower[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            upper[i] = h[i];
            rhs[i] = 6.0 * (slope[i] - slope[i - 1]);
        }
        lower[n - 1] = h[n - 2];
        diag[n - 1] = 2.0 * h[n - 2];
        rhs[n - 1] = -6.0 * slope[n - 2];

        for i in 1..n {
            let w = lower[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
        }
        Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    /// Value and first two derivatives; constant outside the knot range.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.t.len();
        if t <= self.t[0] {
            return (self.y[0], 0.0, 0.0);
        }
        if t >= self.t[n - 1] {
            return (self.y[n - 1], 0.0, 0.0);
        }
        let i = self.t.partition_point(|&k| k <= t) - 1;
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (value, d1, d2)
    }
}

/// Smooth body trajectory through waypoints, interpolated per channel in
/// position and ZYX Euler angles. The body rests at the first and last
/// waypoint outside their time span.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    channels: [ClampedSpline; 6],
}

/// Kinematics of the body at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

impl Trajectory {
    pub fn new(waypoints: &[(f64, Pose)]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidInput(
                "waypoint times must be strictly increasing".into(),
            ));
        }
        let t: Vec<f64> = waypoints.iter().map(|w| w.0).collect();
        let mut values: [Vec<f64>; 6] = Default::default();
        let mut prev_yaw: Option<f64> = None;
        for (_, pose) in waypoints {
            let (mut yaw, pitch, roll) = pose.rotation.euler_zyx();
            if let Some(prev) = prev_yaw {
                yaw = prev + (yaw - prev + PI).rem_euclid(TAU) - PI;
            }
            prev_yaw = Some(yaw);
            let tr = pose.translation;
            for (c, v) in [tr.x, tr.y, tr.z, yaw, pitch, roll].into_iter().enumerate() {
                values[c].push(v);
            }
        }
        Ok(Self {
            channels: values.map(|v| ClampedSpline::new(&t, &v)),
        })
    }

    pub fn start_time(&self) -> f64 {
        self.channels[0].t[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.channels[0].t.last().expect("at least two knots")
    }

    pub fn pose(&self, t: f64) -> Pose {
        self.kinematics(t).pose
    }

    /// Time reparametrization `(τ, dτ/dt, d²τ/dt²)` that brings the first and
    /// last segments in with zero acceleration while keeping every waypoint
    /// time and C² continuity at the interior knots.
    fn warp(&self, t: f64) -> (f64, f64, f64) {
        let knots = &self.channels[0].t;
        let n = knots.len();
        let (t0, tn) = (knots[0], knots[n - 1]);
        if t <= t0 || t >= tn {
            return (t, 1.0, 0.0);
        }
        if n == 2 {
            let h = tn - t0;
            let u = (t - t0) / h;
            return (t0 + h * u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u), (6.0 - 12.0 * u) / h);
        }
        // w(0) = w'(0) = 0, w(1) = w'(1) = 1, w''(1) = 0
        let w = |u: f64| (u * u * (3.0 - 3.0 * u + u * u), u * (6.0 - 9.0 * u + 4.0 * u * u), 6.0 - 18.0 * u + 12.0 * u * u);
        if t < knots[1] {
            let h = knots[1] - t0;
            let (w0, w1, w2) = w((t - t0) / h);
            (t0 + h * w0, w1, w2 / h)
        } else if t > knots[n - 2] {
            let h = tn - knots[n - 2];
            let (w0, w1, w2) = w((tn - t) / h);
            (tn - h * w0, w1, -w2 / h)
        } else {
            (t, 1.0, 0.0)
        }
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let (tau, dtau, ddtau) = self.warp(t);
        let e = self.channels.each_ref().map(|c| {
            let (y, d1, d2) = c.eval(tau);
            (y, d1 * dtau, d2 * dtau * dtau + d1 * ddtau)
        });
        let (yaw, pitch, roll) = (e[3].0, e[4].0, e[5].0);
        let (dyaw, dpitch, droll) = (e[3].1, e[4].1, e[5].1);
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        let angular_velocity = Vector3::new(
            droll - dyaw * sp,
            dpitch * cr + dyaw * cp * sr,
            -dpitch * sr + dyaw * cp * cr,
        );
        Kinematics {
            pose: Pose::new(
                Rotation::from_euler_zyx(yaw, pitch, roll),
                Vector3::new(e[0].0, e[1].0, e[2].0),
            ),
            velocity: Vector3::new(e[0].1, e[1].1, e[2].1),
            acceleration: Vector3::new(e[0].2, e[1].2, e[2].2),
            angular_velocity,
        }
    }
}

/// Per-sample white noise and constant biases of the simulated IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseSpec {
    pub gyro_sigma: f64,
    pub accel_sigma: f64,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
}

impl ImuNoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            gyro_sigma: 0.0,
            accel_sigma: 0.0,
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        }
    }
}

impl Default for ImuNoiseSpec {
    fn default() -> Self {
        Self {
            gyro_sigma: 2e-3,
            accel_sigma: 2e-2,
            gyro_bias: Vector3::new(2e-3, -1e-3, 1.5e-3),
            accel_bias: Vector3::new(0.02, -0.015, 0.03),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub waypoints: Vec<(f64, Pose)>,
    pub imu_rate: f64,
    pub scan_rate: f64,
    /// Sweep duration of one scan, seconds.
    pub scan_duration: f64,
    pub imu_noise: ImuNoiseSpec,
    /// Stationary lead-in before the first waypoint, seconds.
    pub rest_duration: f64,
    pub seed: u64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs at least 2 waypoints, got {}",
                self.waypoints.len()
            )));
        }
        let rates = [self.imu_rate, self.scan_rate, self.scan_duration];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) || !(self.rest_duration >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "rates and durations must be positive: imu {}, scan {}, sweep {}, rest {}",
                self.imu_rate, self.scan_rate, self.scan_duration, self.rest_duration
            )));
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].0 - self.rest_duration
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].0
    }
}

/// True body rates and specific force along the trajectory, plus seeded
/// white noise and constant biases, from the start of the rest period to the
/// last waypoint.
pub fn simulate_imu(spec: &TrajectorySpec) -> Result<Vec<ImuSample>> {
    spec.validate()?;
    let traj = Trajectory::new(&spec.waypoints)?;
    imu_stream(&traj, spec.start_time(), spec.end_time(), spec.imu_rate, &spec.imu_noise, spec.seed)
}

/// IMU samples at `rate` covering `[t0, t1]`.
pub fn imu_stream(
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    rate: f64,
    noise: &ImuNoiseSpec,
    seed: u64,
) -> Result<Vec<ImuSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gyro_noise = Normal::new(0.0, noise.gyro_sigma)
        .map_err(|e| Error::InvalidInput(format!("gyro noise: {e}")))?;
    let accel_noise = Normal::new(0.0, noise.accel_sigma)
        .map_err(|e| Error::InvalidInput(format!("accel noise: {e}")))?;
    let gravity = Vector3::new(0.0, 0.0, -GRAVITY);
    let count = ((t1 - t0) * rate + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| {
            let t = t0 + k as f64 / rate;
            let kin = traj.kinematics(t);
            let specific_force = kin.pose.rotation.inverse_rotate(&(kin.acceleration - gravity));
            let gyro = kin.angular_velocity
                + noise.gyro_bias
                + Vector3::from_fn(|_, _| gyro_noise.sample(&mut rng));
            let accel = specific_force
                + noise.accel_bias
                + Vector3::from_fn(|_, _| accel_noise.sample(&mut rng));
            ImuSample::new(t, gyro, accel)
        })
        .collect()
}

/// Scene plus sensor setup for a whole synthetic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub scene: SceneSpec,
    pub lidar: LidarModel,
    pub trajectory: TrajectorySpec,
    /// Start time of the first scan.
    pub first_scan: f64,
    pub frames: usize,
    /// Spacing of ground-truth markers along the trajectory, seconds.
    pub marker_interval: f64,
}

/// A generated recording. Ground truth and markers are expressed in the body
/// frame at the start of the recording, which is the frame the odometry
/// estimates in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scans: Vec<LidarScan>,
    pub imu: Vec<ImuSample>,
    /// Pose at each scan end time.
    pub ground_truth: Vec<(f64, Pose)>,
    pub markers: Vec<MarkerPose>,
}

impl SequenceSpec {
    pub fn scan_window(&self, frame: usize) -> (f64, f64) {
        let t0 = self.first_scan + frame as f64 / self.trajectory.scan_rate;
        (t0, t0 + self.trajectory.scan_duration)
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        self.trajectory.validate()?;
        Trajectory::new(&self.trajectory.waypoints)
    }

    /// Body pose relative to the pose at the start of the recording.
    pub fn relative_pose(&self, traj: &Trajectory, t: f64) -> Pose {
        traj.pose(self.trajectory.start_time()).inverse() * traj.pose(t)
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.scene.validate()?;
        let traj = self.trajectory()?;
        let scene = Scene::build(&self.scene.kind);
        let t_begin = self.trajectory.start_time();
        if self.first_scan < t_begin {
            return Err(Error::InvalidInput(
                "first scan starts before the recording".into(),
            ));
        }
        let last_end = if self.frames == 0 {
            self.first_scan
        } else {
            self.scan_window(self.frames - 1).1
        };
        let imu = imu_stream(
            &traj,
            t_begin,
            last_end.max(self.trajectory.end_time()),
            self.trajectory.imu_rate,
            &self.trajectory.imu_noise,
            self.trajectory.seed,
        )?;

        let lidar = LidarModel {
            range_sigma: self.scene.noise_sigma,
            ..self.lidar
        };
        let scans = (0..self.frames)
            .map(|k| {
                let (t0, t1) = self.scan_window(k);
                simulate_lidar(
                    &scene,
                    &lidar,
                    |t| traj.pose(t),
                    t0,
                    t1 - t0,
                    self.scene.seed.wrapping_add(k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let ground_truth = scans
            .iter()
            .map(|s| (s.t_end(), self.relative_pose(&traj, s.t_end())))
            .collect();

        let mut markers = Vec::new();
        if self.marker_interval > 0.0 {
            let mut t = self.first_scan;
            while t <= last_end + 1e-9 {
                markers.push(MarkerPose {
                    id: markers.len() as u32,
                    position: self.relative_pose(&traj, t).translation,
                });
                t += self.marker_interval;
            }
        }
        Ok(Dataset {
            scans,
            imu,
            ground_truth,
            markers,
        })
    }
}

/// Ready-made scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenePreset {
    Room,
    Corridor,
    RoomCorridorRoom,
    SpiralStair,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 4] = [
        ScenePreset::Room,
        ScenePreset::Corridor,
        ScenePreset::RoomCorridorRoom,
        ScenePreset::SpiralStair,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenePreset::Room => "room",
            ScenePreset::Corridor => "corridor",
            ScenePreset::RoomCorridorRoom => "room-corridor-room",
            ScenePreset::SpiralStair => "spiral-stair",
        }
    }
}

impl std::str::FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scene preset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MotionPreset {
    /// Move through the scene.
    #[default]
    Traverse,
    /// Stay at the start pose.
    Static,
}

impl std::str::FromStr for MotionPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traverse" => Ok(MotionPreset::Traverse),
            "static" => Ok(MotionPreset::Static),
            other => Err(Error::InvalidInput(format!("unknown trajectory preset `{other}`"))),
        }
    }
}

/// Sensor height above the floor in the preset scenes, meters.
pub const SENSOR_HEIGHT: f64 = 1.2;
pub const SCAN_NOISE_SIGMA: f64 = 0.02;
pub const PRESET_FRAMES: usize = 200;
/// Stationary lead-in used by the presets, seconds.
pub const PRESET_REST: f64 = 1.5;

fn level_pose(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
    Pose::new(Rotation::from_euler_zyx(yaw, 0.0, 0.0), Vector3::new(x, y, z))
}

/// Waypoints every `dt` seconds from `t0` along `f(s)` for `s ∈ [0, 1]`.
fn sample_path(t0: f64, t1: f64, knots: usize, f: impl Fn(f64) -> Pose) -> Vec<(f64, Pose)> {
    (0..=knots)
        .map(|i| {
            let s = i as f64 / knots as f64;
            (t0 + (t1 - t0) * s, f(s))
        })
        .collect()
}

impl SequenceSpec {
    pub fn preset(scene: ScenePreset, motion: MotionPreset, seed: u64) -> SequenceSpec {
        let t_move = PRESET_REST;
        let first_scan = 1.0;
        let frames = PRESET_FRAMES;
        let t_end = first_scan + frames as f64 * 0.1;
        let (kind, path): (SceneKind, Vec<(f64, Pose)>) = match scene {
            ScenePreset::Room => (
                SceneKind::Room {
                    width: 10.0,
                    length: 10.0,
                    height: 3.0,
                },
                // rounded loop around the room center, heading along the path
                sample_path(t_move, t_end, 20, |s| {
                    let a = TAU * s;
                    let x = 2.5 * a.sin();
                    let y = 1.5 * (1.0 - a.cos());
                    let yaw = 0.6 * a.sin();
                    level_pose(x - 1.0, y - 1.0, SENSOR_HEIGHT + 0.1 * (2.0 * a).sin(), yaw)
                }),
            ),
            ScenePreset::Corridor => (
                SceneKind::Corridor {
                    width: 1.5,
                    height: 2.5,
                    length: 40.0,
                },
                sample_path(t_move, t_end, 20, |s| {
                    level_pose(5.0 + 20.0 * s, 0.1 * (TAU * s).sin(), SENSOR_HEIGHT, 0.05 * (TAU * s).sin())
                }),
            ),
            ScenePreset::RoomCorridorRoom => (
                SceneKind::RoomCorridorRoom {
                    room_width: 10.0,
                    room_length: 10.0,
                    room_height: 3.0,
                    corridor_width: 1.2,
                    corridor_height: 2.5,
                    corridor_length: 10.0,
                },
                sample_path(t_move, t_end, 20, |s| level_pose(-5.0 + 20.0 * s, 0.0, SENSOR_HEIGHT, 0.0)),
            ),
            ScenePreset::SpiralStair => {
                let (radius, pitch, wall_offset) = (1.6, 2.8, 0.6);
                let walk = radius - wall_offset;
                let turns = 1.5;
                (
                    SceneKind::SpiralStair {
                        radius,
                        pitch,
                        turns: turns + 0.5,
                        wall_offset,
                    },
                    sample_path(t_move, t_end, 24, |s| {
                        let theta = TAU * turns * s + 0.2;
                        let z = pitch * theta / TAU + SENSOR_HEIGHT;
                        level_pose(walk * theta.cos(), walk * theta.sin(), z, theta + PI / 2.0)
                    }),
                )
            }
        };
        let waypoints = match motion {
            MotionPreset::Traverse => path,
            MotionPreset::Static => vec![(t_move, path[0].1), (t_end, path[0].1)],
        };
        SequenceSpec {
            scene: SceneSpec {
                kind,
                density: 100.0,
                noise_sigma: SCAN_NOISE_SIGMA,
                seed,
            },
            lidar: LidarModel::default(),
            trajectory: TrajectorySpec {
                waypoints,
                imu_rate: 200.0,
                scan_rate: 10.0,
                scan_duration: 0.1,
                imu_noise: ImuNoiseSpec::default(),
                rest_duration: t_move,
                seed: seed ^ 0x5EED,
            },
            first_scan,
            frames,
            marker_interval: 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::eskf::{undistort_scan, NavState};
    use crate::geom::{so3_exp, transform_point};

    fn room_spec() -> SceneSpec {
        SceneSpec {
            kind: SceneKind::Room {
                width: 10.0,
                length: 10.0,
                height: 3.0,
            },
            density: 100.0,
            noise_sigma: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn room_count_matches_area() {
        let points = generate_scene(&room_spec()).unwrap();
        let area = 2.0 * 100.0 + 2.0 * (10.0 + 10.0) * 3.0;
        assert!((points.len() as f64 - 100.0 * area).abs() <= 6.0);
        let scene = Scene::build(&room_spec().kind);
        assert_abs_diff_eq!(scene.area(), area, epsilon = 1e-9);
    }

    #[test]
    fn corridor_points_lie_on_walls() {
        let spec = SceneSpec {
            kind: SceneKind::Corridor {
                width: 1.5,
                height: 2.5,
                length: 30.0,
            },
            ..room_spec()
        };
        for p in generate_scene(&spec).unwrap() {
            let on_wall = (p.y().abs() - 0.75).abs() < 1e-12;
            let on_slab = (p.z().abs() < 1e-12 || (p.z() - 2.5).abs() < 1e-12) && p.y().abs() <= 0.75;
            assert!(on_wall || on_slab, "{p:?}");
            assert!(p.x() >= 0.0 && p.x() <= 30.0);
        }
    }

    #[test]
    fn stair_wall_points_sit_at_radius() {
        let spec = SceneSpec {
            kind: SceneKind::SpiralStair {
                radius: 1.6,
                pitch: 2.8,
                turns: 2.0,
                wall_offset: 0.6,
            },
            noise_sigma: 0.01,
            ..room_spec()
        };
        let points = generate_scene(&spec).unwrap();
        let scene = Scene::build(&spec.kind);
        // the first surface is the outer wall
        let wall_area = scene.surfaces[0].area();
        let wall_count = (wall_area * spec.density).round() as usize;
        for p in &points[..wall_count] {
            assert!((p.coords().xy().norm() - 1.6).abs() < 6.0 * 0.01);
        }
        let noiseless = generate_scene(&SceneSpec { noise_sigma: 0.0, ..spec }).unwrap();
        for p in &noiseless {
            assert!(scene.distance(p.coords()) < 1e-9);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_scene(&room_spec()).unwrap();
        let b = generate_scene(&room_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneSpec { seed: 2, ..room_spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = SceneSpec {
            density: 0.0,
            ..room_spec()
        };
        assert!(generate_scene(&bad).is_err());
        let bad = SceneSpec {
            kind: SceneKind::Room {
                width: -1.0,
                length: 1.0,
                height: 1.0,
            },
            ..room_spec()
        };
        assert!(generate_scene(&bad).is_err());
    }

    #[test]
    fn ray_hits_agree_with_surface_distance() {
        let scene = Scene::build(&SceneKind::SpiralStair {
            radius: 1.6,
            pitch: 2.8,
            turns: 2.0,
            wall_offset: 0.6,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let origin = Vector3::new(1.0, 0.2, 1.5);
        let mut hits = 0;
        for _ in 0..2000 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            if let Some(s) = scene.cast(&origin, &dir, 0.0, 100.0) {
                hits += 1;
                let p = origin + dir * s;
                assert!(scene.distance(&p) < 1e-9);
                // nothing closer along the ray
                for k in 1..20 {
                    let q = origin + dir * (s * k as f64 / 20.0);
                    assert!(scene.distance(&q) > 0.0);
                }
            }
        }
        assert!(hits > 1500);
    }

    fn static_pose() -> Pose {
        Pose::new(so3_exp(&Vector3::new(0.1, -0.2, 0.7)), Vector3::new(1.0, 0.5, 1.2))
    }

    #[test]
    fn stationary_scan_has_no_distortion() {
        let scene = generate_scene(&room_spec()).unwrap();
        let pose = static_pose();
        let scan = simulate_scan(&scene, |_| pose, 2.0, 0.1, 6.0).unwrap();
        assert!(!scan.is_empty());
        let inv = pose.inverse();
        let expected: Vec<_> = scene
            .iter()
            .filter(|p| (p.coords() - pose.translation).norm() <= 6.0)
            .map(|p| transform_point(&inv, p))
            .collect();
        assert_eq!(scan.len(), expected.len());
        for (a, b) in scan.points.iter().zip(&expected) {
            assert!((a.coords() - b.coords()).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_range_gives_empty_scan() {
        let scene = generate_scene(&room_spec()).unwrap();
        let scan = simulate_scan(&scene, |_| static_pose(), 0.0, 0.1, 0.0).unwrap();
        assert!(scan.is_empty());
    }

    fn moving_pose(t: f64) -> Pose {
        Pose::new(
            so3_exp(&Vector3::new(0.0, 0.1 * t, 0.8 * t)),
            Vector3::new(1.5 * t, -0.3 * t, 1.2),
        )
    }

    #[test]
    fn undistorting_with_true_poses_recovers_end_frame() {
        let scene = generate_scene(&SceneSpec {
            density: 20.0,
            ..room_spec()
        })
        .unwrap();
        let (t0, dt) = (1.0, 0.1);
        let scan = simulate_scan(&scene, moving_pose, t0, dt, 8.0).unwrap();
        let history: Vec<_> = (0..=2000)
            .map(|i| {
                let t = t0 + dt * i as f64 / 2000.0;
                (t, moving_pose(t))
            })
            .collect();
        let end = NavState {
            rotation: moving_pose(t0 + dt).rotation,
            position: moving_pose(t0 + dt).translation,
            ..NavState::default()
        };
        let fixed = undistort_scan(&scan, &end, &history).unwrap();
        let inv_end = moving_pose(t0 + dt).inverse();
        let mut worst: f64 = 0.0;
        for (raw, out) in scan.points.iter().zip(&fixed.points) {
            let world = transform_point(&moving_pose(t0 + raw.time_offset()), raw);
            let expected = transform_point(&inv_end, &world);
            worst = worst.max((expected.coords() - out.coords()).norm());
        }
        // interpolation between dense history poses is exact to second order
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn lidar_scan_is_deterministic_and_timed() {
        let scene = Scene::build(&room_spec().kind);
        let model = LidarModel {
            columns: 200,
            max_incidence: FRAC_PI_2,
            ..LidarModel::default()
        };
        let pose = |t: f64| level_pose(0.3 * t, 0.0, 1.2, 0.2 * t);
        let a = simulate_lidar(&scene, &model, pose, 1.0, 0.1, 9).unwrap();
        let b = simulate_lidar(&scene, &model, pose, 1.0, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200 * 32);
        assert!(a.points.windows(2).all(|w| w[0].time_offset() <= w[1].time_offset()));
        assert!(a.points.iter().all(|p| p.time_offset() < 0.1));
    }

    #[test]
    fn grazing_returns_are_dropped() {
        let scene = Scene::build(&SceneKind::Corridor {
            width: 1.5,
            height: 2.5,
            length: 40.0,
        });
        let origin = Vector3::new(20.0, 0.0, 1.2);
        let pose = |_: f64| Pose::from_translation(origin);
        let all = LidarModel {
            max_incidence: FRAC_PI_2,
            range_sigma: 0.0,
            ..LidarModel::default()
        };
        let cut = LidarModel {
            max_incidence: 75.0f64.to_radians(),
            ..all
        };
        let kept = simulate_lidar(&scene, &cut, pose, 0.0, 0.1, 1).unwrap();
        let full = simulate_lidar(&scene, &all, pose, 0.0, 0.1, 1).unwrap();
        assert!(kept.len() < full.len());
        for p in &kept.points {
            let dir = p.coords().normalize();
            let hit = origin + p.coords();
            let wall = (hit.y.abs() - 0.75).abs() < 1e-6;
            let normal = if wall { Vector3::y() } else { Vector3::z() };
            let incidence = normal.dot(&dir).abs().acos();
            assert!(incidence <= cut.max_incidence + 1e-9, "{incidence}");
        }
    }

    #[test]
    fn noiseless_lidar_returns_lie_on_surfaces() {
        let kind = SceneKind::RoomCorridorRoom {
            room_width: 10.0,
            room_length: 10.0,
            room_height: 3.0,
            corridor_width: 1.2,
            corridor_height: 2.5,
            corridor_length: 10.0,
        };
        let scene = Scene::build(&kind);
        let model = LidarModel {
            columns: 300,
            range_sigma: 0.0,
            ..LidarModel::default()
        };
        let pose = |t: f64| level_pose(-1.0 + 2.0 * t, 0.1, 1.2, 0.3);
        let scan = simulate_lidar(&scene, &model, pose, 0.0, 0.1, 1).unwrap();
        for p in &scan.points {
            let world = transform_point(&pose(p.time_offset()), p);
            assert!(scene.distance(world.coords()) < 1e-9);
        }
    }

    #[test]
    fn spline_interpolates_and_clamps() {
        let t = [0.0, 1.0, 2.5, 4.0];
        let y = [0.0, 2.0, -1.0, 3.0];
        let s = ClampedSpline::new(&t, &y);
        for (ti, yi) in t.iter().zip(&y) {
            assert_abs_diff_eq!(s.eval(*ti).0, *yi, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.eval(0.0).1, 0.0, epsilon = 1e-12);
        // derivative at the last knot from inside the span
        assert_abs_diff_eq!(s.eval(4.0 - 1e-9).1, 0.0, epsilon = 1e-6);
        // analytic derivatives against central differences
        for i in 1..40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let (_, d1, d2) = s.eval(x);
            assert_abs_diff_eq!(d1, (s.eval(x + h).0 - s.eval(x - h).0) / (2.0 * h), epsilon = 1e-6);
            assert_abs_diff_eq!(d2, (s.eval(x + h).1 - s.eval(x - h).1) / (2.0 * h), epsilon = 1e-5);
        }
    }

    #[test]
    fn body_rates_match_finite_differences() {
        let spec = SequenceSpec::preset(ScenePreset::SpiralStair, MotionPreset::Traverse, 0);
        let traj = spec.trajectory().unwrap();
        for i in 0..50 {
            let t = 1.2 + i as f64 * 0.41;
            let h = 1e-6;
            let kin = traj.kinematics(t);
            let numeric = traj.pose(t).rotation.local(&traj.pose(t + h).rotation) / h;
            assert!((numeric - kin.angular_velocity).norm() < 1e-4);
            let dv = (traj.pose(t + h).translation - traj.pose(t - h).translation) / (2.0 * h);
            assert!((dv - kin.velocity).norm() < 1e-5);
            let da = (traj.kinematics(t + h).velocity - traj.kinematics(t - h).velocity) / (2.0 * h);
            assert!((da - kin.acceleration).norm() < 1e-4);
        }
    }

    #[test]
    fn motion_starts_and_stops_smoothly() {
        let waypoints: Vec<_> = [(1.0, 0.0), (2.0, 1.0), (3.5, 1.5), (5.0, 4.0)]
            .iter()
            .map(|&(t, x)| (t, level_pose(x, 0.0, 0.0, 0.3 * x)))
            .collect();
        let traj = Trajectory::new(&waypoints).unwrap();
        for t in [1.0, 5.0] {
            for eps in [-1e-9, 1e-9] {
                let k = traj.kinematics(t + eps);
                assert!(k.acceleration.norm() < 1e-6, "{t} {:?}", k.acceleration);
                assert!(k.velocity.norm() < 1e-6);
            }
        }
        // waypoints are still hit on time
        for (t, pose) in &waypoints {
            assert!((traj.pose(*t).translation - pose.translation).norm() < 1e-12);
        }
        // acceleration is continuous across the warped segment ends
        for t in [2.0, 3.5] {
            let a = traj.kinematics(t - 1e-7).acceleration;
            let b = traj.kinematics(t + 1e-7).acceleration;
            assert!((a - b).norm() < 1e-5);
        }
        let two = Trajectory::new(&waypoints[..2]).unwrap();
        assert!(two.kinematics(1.0 + 1e-9).acceleration.norm() < 1e-6);
        assert!((two.pose(1.5).translation.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_waypoints_is_an_error() {
        let spec = TrajectorySpec {
            waypoints: vec![(0.0, Pose::identity())],
            imu_rate: 200.0,
            scan_rate: 10.0,
            scan_duration: 0.1,
            imu_noise: ImuNoiseSpec::default(),
            rest_duration: 0.0,
            seed: 0,
        };
        assert!(simulate_imu(&spec).is_err());
    }

    #[test]
    fn stationary_imu_reads_bias_and_gravity() {
        let pose = static_pose();
        let noise = ImuNoiseSpec::default();
        let spec = TrajectorySpec {
            waypoints: vec![(0.0, pose), (5.0, pose)],
            imu_rate: 200.0,
            scan_rate: 10.0,
            scan_duration: 0.1,
            imu_noise: noise,
            rest_duration: 0.0,
            seed: 4,
        };
        let samples = simulate_imu(&spec).unwrap();
        assert_eq!(samples.len(), 1001);
        let n = samples.len() as f64;
        let mean_gyro = samples.iter().fold(Vector3::zeros(), |a, s| a + s.gyro) / n;
        let mean_accel = samples.iter().fold(Vector3::zeros(), |a, s| a + s.accel) / n;
        let expected_accel = pose.rotation.inverse_rotate(&Vector3::new(0.0, 0.0, GRAVITY)) + noise.accel_bias;
        let tol_g = 4.0 * noise.gyro_sigma / n.sqrt();
        let tol_a = 4.0 * noise.accel_sigma / n.sqrt();
        assert!((mean_gyro - noise.gyro_bias).amax() < tol_g);
        assert!((mean_accel - expected_accel).amax() < tol_a);
    }

    #[test]
    fn yaw_spin_mean_rate_within_three_sigma() {
        let rate = 0.5;
        let waypoints: Vec<_> = (0..=10)
            .map(|i| {
                let t = i as f64;
                (t, level_pose(0.0, 0.0, 0.0, rate * t))
            })
            .collect();
        let noise = ImuNoiseSpec {
            gyro_bias: Vector3::zeros(),
            ..ImuNoiseSpec::default()
        };
        let traj = Trajectory::new(&waypoints).unwrap();
        // constant-rate section away from the clamped ends
        let samples = imu_stream(&traj, 3.0, 7.0, 200.0, &noise, 11).unwrap();
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.gyro.z).sum::<f64>() / n;
        let truth = samples.iter().map(|s| traj.kinematics(s.t).angular_velocity.z).sum::<f64>() / n;
        assert!((truth - rate).abs() < 1e-3);
        assert!((mean - truth).abs() < 3.0 * noise.gyro_sigma / n.sqrt());
    }

    #[test]
    fn presets_generate_consistent_datasets() {
        let mut spec = SequenceSpec::preset(ScenePreset::Room, MotionPreset::Traverse, 5);
        spec.frames = 3;
        spec.lidar.columns = 100;
        let data = spec.generate().unwrap();
        assert_eq!(data.scans.len(), 3);
        assert_eq!(data.ground_truth.len(), 3);
        assert!(data.imu.first().unwrap().t <= 0.0 + 1e-12);
        assert!(data.imu.last().unwrap().t >= data.scans[2].t_end() - 1e-9);
        // body frame at the start of the recording is the reference
        let traj = spec.trajectory().unwrap();
        assert_eq!(spec.relative_pose(&traj, 0.0).translation, Vector3::zeros());
        assert_eq!(spec.generate().unwrap(), data);
    }
}
