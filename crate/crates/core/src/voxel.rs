//! Voxel-grid downsampling and the incremental world map.
//!
//! The map is a spatial hash of fixed-size cells. Each cell keeps a bounded
//! list of points; once full, further points landing in it are dropped. When
//! the number of cells exceeds `max_cells`, the least recently updated cell
//! is evicted.
//!
//! [`VoxelMap::knn_search`] is exact: it visits cells in growing Chebyshev
//! shells around the query and stops once no unvisited cell can hold a point
//! closer than the current k-th neighbor. Ties are broken by insertion order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::Vector3;

use crate::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelIndex {
    pub fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    pub fn of(p: &Vector3<f64>, voxel_size: f64) -> Self {
        Self {
            ix: (p.x / voxel_size).floor() as i64,
            iy: (p.y / voxel_size).floor() as i64,
            iz: (p.z / voxel_size).floor() as i64,
        }
    }

    fn offset(&self, dx: i64, dy: i64, dz: i64) -> Self {
        Self::new(self.ix + dx, self.iy + dy, self.iz + dz)
    }
}

pub fn voxel_index(p: &Point3, voxel_size: f64) -> VoxelIndex {
    VoxelIndex::of(p.coords(), voxel_size)
}

#[derive(Default)]
struct Centroid {
    sum: Vector3<f64>,
    intensity: f64,
    time_offset: f64,
    count: usize,
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Output is ordered by voxel index (lexicographic on `ix, iy, iz`).
pub fn voxel_downsample(cloud: &[Point3], voxel_size: f64) -> Vec<Point3> {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut cells: BTreeMap<VoxelIndex, Centroid> = BTreeMap::new();
    for p in cloud {
        let acc = cells.entry(voxel_index(p, voxel_size)).or_default();
        acc.sum += p.coords();
        acc.intensity += f64::from(p.intensity());
        acc.time_offset += p.time_offset();
        acc.count += 1;
    }
    cells
        .into_values()
        .map(|c| {
            let n = c.count as f64;
            Point3::from_coords(c.sum / n)
                .with_intensity((c.intensity / n) as f32)
                .with_time_offset(c.time_offset / n)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    /// Edge length of the hash cells; independent of scan downsampling.
    pub cell_size: f64,
    pub capacity_per_cell: usize,
    pub max_cells: usize,
    /// A point closer than this to one already stored in its cell is
    /// dropped, so revisited surfaces do not pile up duplicates.
    pub min_spacing: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.5,
            capacity_per_cell: 32,
            max_cells: 500_000,
            min_spacing: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct MapPoint {
    point: Point3,
    seq: u64,
}

#[derive(Debug, Clone)]
struct Cell {
    points: Vec<MapPoint>,
    stamp: u64,
}

/// One result of [`VoxelMap::knn_search`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub point: Point3,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: MapConfig,
    cells: HashMap<VoxelIndex, Cell>,
    lru: BTreeSet<(u64, VoxelIndex)>,
    clock: u64,
    next_seq: u64,
}

impl VoxelMap {
    pub fn new(config: MapConfig) -> Self {
        assert!(config.cell_size > 0.0, "cell size must be positive");
        assert!(config.capacity_per_cell > 0 && config.max_cells > 0);
        assert!(config.min_spacing >= 0.0, "spacing must be non-negative");
        Self {
            config,
            cells: HashMap::new(),
            lru: BTreeSet::new(),
            clock: 0,
            next_seq: 0,
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_points(&self) -> usize {
        self.cells.values().map(|c| c.points.len()).sum()
    }

    /// All stored points in cell-index order, then insertion order.
    pub fn points(&self) -> Vec<Point3> {
        let mut keys: Vec<_> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys.iter()
            .flat_map(|k| self.cells[k].points.iter().map(|m| m.point))
            .collect()
    }

    /// Appends world-frame points to their cells.
    pub fn insert_scan(&mut self, cloud: &[Point3]) {
        self.clock += 1;
        let stamp = self.clock;
        for p in cloud {
            let key = voxel_index(p, self.config.cell_size);
            let seq = self.next_seq;
            self.next_seq += 1;
            if let Some(cell) = self.cells.get_mut(&key) {
                if cell.stamp != stamp {
                    self.lru.remove(&(cell.stamp, key));
                    self.lru.insert((stamp, key));
                    cell.stamp = stamp;
                }
                let spacing2 = self.config.min_spacing * self.config.min_spacing;
                let crowded = spacing2 > 0.0
                    && cell
                        .points
                        .iter()
                        .any(|m| (m.point.coords() - p.coords()).norm_squared() < spacing2);
                if !crowded && cell.points.len() < self.config.capacity_per_cell {
                    cell.points.push(MapPoint { point: *p, seq });
                }
                continue;
            }
            if self.cells.len() >= self.config.max_cells {
                if let Some(oldest) = self.lru.pop_first() {
                    self.cells.remove(&oldest.1);
                }
            }
            self.cells.insert(
                key,
                Cell {
                    points: vec![MapPoint { point: *p, seq }],
                    stamp,
                },
            );
            self.lru.insert((stamp, key));
        }
    }

    /// Up to `k` stored points within `max_radius` of `query`, nearest first.
    pub fn knn_search(&self, query: &Point3, k: usize, max_radius: f64) -> Vec<Neighbor> {
        assert!(k >= 1, "k must be at least 1");
        assert!(max_radius > 0.0, "search radius must be positive");
        if self.cells.is_empty() {
            return Vec::new();
        }
        let size = self.config.cell_size;
        let q = query.coords();
        let center = VoxelIndex::of(q, size);
        let r2 = max_radius * max_radius;

        // Distance from the query to the nearest face of its own cell.
        let margin = [
            (q.x - center.ix as f64 * size, (center.ix + 1) as f64 * size - q.x),
            (q.y - center.iy as f64 * size, (center.iy + 1) as f64 * size - q.y),
            (q.z - center.iz as f64 * size, (center.iz + 1) as f64 * size - q.z),
        ]
        .iter()
        .map(|(a, b)| a.min(*b).max(0.0))
        .fold(f64::INFINITY, f64::min);

        // (squared distance, insertion seq, point)
        let mut best: Vec<(f64, u64, Point3)> = Vec::with_capacity(k + 1);
        let max_shell = (max_radius / size).ceil() as i64 + 1;
        for shell in 0..=max_shell {
            let lower = if shell == 0 {
                0.0
            } else {
                (shell - 1) as f64 * size + margin
            };
            if lower > max_radius {
                break;
            }
            if best.len() >= k && best[k - 1].0 < lower * lower {
                break;
            }
            for key in shell_cells(center, shell) {
                // a full list only admits points at or below its k-th distance
                let bound = if best.len() == k { best[k - 1].0.min(r2) } else { r2 };
                if box_distance_sq(q, &key, size) > bound {
                    continue;
                }
                let Some(cell) = self.cells.get(&key) else {
                    continue;
                };
                for m in &cell.points {
                    let d2 = (m.point.coords() - q).norm_squared();
                    if d2 > r2 {
                        continue;
                    }
                    let cand = (d2, m.seq, m.point);
                    let pos = best.partition_point(|b| (b.0, b.1) < (cand.0, cand.1));
                    if pos < k {
                        if best.len() == k {
                            best.pop();
                        }
                        best.insert(pos, cand);
                    }
                }
            }
        }
        best.into_iter()
            .map(|(d2, _, point)| Neighbor {
                point,
                distance: d2.sqrt(),
            })
            .collect()
    }
}

/// Cells with Chebyshev distance exactly `shell` from `center`.
fn shell_cells(center: VoxelIndex, shell: i64) -> impl Iterator<Item = VoxelIndex> {
    let r = shell;
    (-r..=r).flat_map(move |dx| {
        (-r..=r).flat_map(move |dy| {
            let on_face = dx.abs() == r || dy.abs() == r;
            let zs: Vec<i64> = if on_face {
                (-r..=r).collect()
            } else {
                vec![-r, r]
            };
            zs.into_iter().map(move |dz| center.offset(dx, dy, dz))
        })
    })
}

fn box_distance_sq(q: &Vector3<f64>, key: &VoxelIndex, size: f64) -> f64 {
    let axis = |c: f64, i: i64| {
        let lo = i as f64 * size;
        let hi = lo + size;
        if c < lo {
            lo - c
        } else if c > hi {
            c - hi
        } else {
            0.0
        }
    };
    let dx = axis(q.x, key.ix);
    let dy = axis(q.y, key.iy);
    let dz = axis(q.z, key.iz);
    dx * dx + dy * dy + dz * dz
}
