//! File formats: binary scans, IMU CSV, TUM trajectories, flat key-value
//! configuration, marker CSV, per-frame logs and score tables.
//!
//! Every reader rejects malformed input with an error that names the file and,
//! for text formats, the 1-based line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;

use crate::degeneracy::{Mode, ParamProfile, ProfilePair};
use crate::error::{Error, Result};
use crate::eval::{MarkerPose, ScoreReport};
use crate::geom::{ImuSample, LidarScan, Point3, Pose, Rotation};
use crate::pipeline::{FrameResult, FrameSink, OdometryConfig};

pub const SCAN_MAGIC: [u8; 4] = *b"LSCN";
pub const SCAN_VERSION: u16 = 1;
pub const SCAN_HEADER_LEN: usize = 32;
/// x, y, z, intensity, time offset as little-endian f32.
pub const SCAN_RECORD_LEN: usize = 20;

pub const IMU_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
pub const MARKER_HEADER: [&str; 4] = ["id", "x", "y", "z"];
pub const FRAME_LOG_HEADER: [&str; 21] = [
    "frame",
    "t",
    "tx",
    "ty",
    "tz",
    "qx",
    "qy",
    "qz",
    "qw",
    "mode",
    "raw_mode",
    "downsampled_count",
    "near_origin_fraction",
    "registered_count",
    "correspondences",
    "residual_rms",
    "iterations",
    "bootstrap",
    "degenerate_warning",
    "numerical_failure",
    "empty_scan",
];
pub const SCORE_HEADER: [&str; 3] = ["id", "distance", "points"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Shortest decimal that parses back to the same `f64`; negative zero prints as `0`.
pub fn format_f64(v: f64) -> String {
    format!("{}", v + 0.0)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_field<T: FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} `{raw}`")))
}

fn parse_finite(path: &Path, line: usize, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = parse_field(path, line, name, raw)?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{name} is not finite")));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// scans

/// Encodes scans as concatenated blocks of a 32-byte header and the points.
pub fn encode_scans(scans: &[LidarScan]) -> Vec<u8> {
    let total: usize = scans
        .iter()
        .map(|s| SCAN_HEADER_LEN + SCAN_RECORD_LEN * s.len())
        .sum();
    let mut out = Vec::with_capacity(total);
    for scan in scans {
        out.extend_from_slice(&SCAN_MAGIC);
        out.extend_from_slice(&SCAN_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&scan.t_start().to_le_bytes());
        out.extend_from_slice(&scan.t_end().to_le_bytes());
        out.extend_from_slice(&(scan.len() as u64).to_le_bytes());
        for p in &scan.points {
            for v in [p.x() as f32, p.y() as f32, p.z() as f32, p.intensity(), p.time_offset() as f32] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes(b.try_into().expect("4-byte slice"))
}

fn le_f64(b: &[u8]) -> f64 {
    f64::from_le_bytes(b.try_into().expect("8-byte slice"))
}

/// Decodes the output of [`encode_scans`]. `path` only labels errors.
pub fn decode_scans(bytes: &[u8], path: &Path) -> Result<Vec<LidarScan>> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    let mut scans = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let block = scans.len();
        let Some(head) = bytes.get(at..at + SCAN_HEADER_LEN) else {
            return Err(truncated(format!(
                "block {block}: header needs {SCAN_HEADER_LEN} bytes, {} left",
                bytes.len() - at
            )));
        };
        let magic: [u8; 4] = head[0..4].try_into().expect("4-byte slice");
        if magic != SCAN_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != SCAN_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version,
                expected: SCAN_VERSION,
            });
        }
        let t_start = le_f64(&head[8..16]);
        let t_end = le_f64(&head[16..24]);
        let count = u64::from_le_bytes(head[24..32].try_into().expect("8-byte slice"));
        at += SCAN_HEADER_LEN;

        let need = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(SCAN_RECORD_LEN))
            .filter(|n| at.checked_add(*n).is_some_and(|end| end <= bytes.len()))
            .ok_or_else(|| {
                truncated(format!(
                    "block {block}: {count} points declared, {} bytes left",
                    bytes.len() - at
                ))
            })?;
        let points = bytes[at..at + need]
            .chunks_exact(SCAN_RECORD_LEN)
            .map(|r| {
                Point3::try_new(
                    le_f32(&r[0..4]) as f64,
                    le_f32(&r[4..8]) as f64,
                    le_f32(&r[8..12]) as f64,
                    le_f32(&r[12..16]),
                    le_f32(&r[16..20]) as f64,
                )
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::InvalidInput(format!("{}: block {block}: {e}", path.display())))?;
        at += need;
        let scan = LidarScan::new(points, t_start, t_end)
            .map_err(|e| Error::InvalidInput(format!("{}: block {block}: {e}", path.display())))?;
        scans.push(scan);
    }
    Ok(scans)
}

pub fn write_scan_file(path: impl AsRef<Path>, scans: &[LidarScan]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_scans(scans)).map_err(|e| Error::io(path, e))
}

pub fn read_scan_file(path: impl AsRef<Path>) -> Result<Vec<LidarScan>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scans(&bytes, path)
}

// ---------------------------------------------------------------------------
// imu

pub fn write_imu_file(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = String::new();
    body.push_str(&IMU_HEADER.join(","));
    body.push('\n');
    for s in samples {
        let fields: Vec<String> = std::iter::once(s.t)
            .chain(s.gyro.iter().copied())
            .chain(s.accel.iter().copied())
            .map(format_f64)
            .collect();
        body.push_str(&fields.join(","));
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads `t,gx,gy,gz,ax,ay,az` rows. Timestamps must strictly increase.
pub fn read_imu_file(path: impl AsRef<Path>) -> Result<Vec<ImuSample>> {
    let path = path.as_ref();
    let rows = read_csv_rows(path, &IMU_HEADER)?;
    let mut out: Vec<ImuSample> = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let mut v = [0.0; 7];
        for (slot, (raw, name)) in v.iter_mut().zip(row.iter().zip(IMU_HEADER)) {
            *slot = parse_finite(path, line, name, raw)?;
        }
        if out.last().is_some_and(|prev| !(v[0] > prev.t)) {
            return Err(Error::NonMonotone {
                path: path.to_path_buf(),
                line,
            });
        }
        out.push(ImuSample {
            t: v[0],
            gyro: Vector3::new(v[1], v[2], v[3]),
            accel: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

/// Rows of a headed CSV with exactly `header.len()` fields, tagged with their line.
fn read_csv_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(open(path)?);
    let found = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// TUM trajectories

/// `timestamp tx ty tz qx qy qz qw`; the timestamp carries nine decimals and
/// the other fields the shortest exact decimal. `qw` is kept non-negative.
pub fn tum_line(t: f64, pose: &Pose) -> String {
    let q = pose.rotation.quaternion();
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    let tr = &pose.translation;
    let fields = [tr.x, tr.y, tr.z, sign * q.i, sign * q.j, sign * q.k, sign * q.w];
    let mut line = format!("{t:.9}");
    for f in fields {
        line.push(' ');
        line.push_str(&format_f64(f));
    }
    line
}

pub fn write_trajectory_tum(path: impl AsRef<Path>, traj: &[(f64, Pose)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (t, pose) in traj {
        writeln!(w, "{}", tum_line(*t, pose)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Blank lines and lines starting with `#` are skipped.
pub fn read_trajectory_tum(path: impl AsRef<Path>) -> Result<Vec<(f64, Pose)>> {
    let path = path.as_ref();
    let mut out: Vec<(f64, Pose)> = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 8];
        for (slot, raw) in v.iter_mut().zip(&fields) {
            *slot = parse_finite(path, line_no, "field", raw)?;
        }
        if out.last().is_some_and(|(t, _)| v[0] < *t) {
            return Err(Error::NonMonotone {
                path: path.to_path_buf(),
                line: line_no,
            });
        }
        let rotation = Rotation::from_wxyz(v[7], v[4], v[5], v[6])
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        out.push((v[0], Pose::new(rotation, Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(out)
}

/// Streams each frame's pose as a TUM line.
pub struct TumWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TumWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let out = create(&path)?;
        Ok(Self { path, out })
    }
}

impl FrameSink for TumWriter {
    fn on_frame(&mut self, frame: &FrameResult) -> Result<()> {
        writeln!(self.out, "{}", tum_line(frame.t, &frame.pose)).map_err(|e| Error::io(&self.path, e))
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

// ---------------------------------------------------------------------------
// per-frame log

/// One row of the per-frame log.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLogRow {
    pub frame: usize,
    pub t: f64,
    pub pose: Pose,
    /// Mode used for registration.
    pub mode: Mode,
    /// Detector output before hysteresis.
    pub raw_mode: Mode,
    pub downsampled_count: usize,
    pub near_origin_fraction: f64,
    pub registered_count: usize,
    /// Valid correspondences in the final update iteration.
    pub correspondences: usize,
    pub residual_rms: f64,
    pub iterations: usize,
    pub bootstrap: bool,
    pub degenerate_warning: bool,
    pub numerical_failure: bool,
    pub empty_scan: bool,
}

impl From<&FrameResult> for FrameLogRow {
    fn from(r: &FrameResult) -> Self {
        Self {
            frame: r.frame,
            t: r.t,
            pose: r.pose,
            mode: r.profile.mode,
            raw_mode: r.report.raw,
            downsampled_count: r.report.downsampled_count,
            near_origin_fraction: r.report.near_origin_fraction,
            registered_count: r.registered_count,
            correspondences: r.stats.final_correspondences(),
            residual_rms: r.stats.residual_rms,
            iterations: r.stats.iterations,
            bootstrap: r.flags.bootstrap,
            degenerate_warning: r.flags.degenerate_warning,
            numerical_failure: r.flags.numerical_failure,
            empty_scan: r.flags.empty_scan,
        }
    }
}

impl FrameLogRow {
    fn fields(&self) -> Vec<String> {
        let q = self.pose.rotation.quaternion();
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        let tr = &self.pose.translation;
        let flag = |b: bool| u8::from(b).to_string();
        let mut f = vec![self.frame.to_string(), format!("{:.9}", self.t)];
        f.extend(
            [tr.x, tr.y, tr.z, sign * q.i, sign * q.j, sign * q.k, sign * q.w]
                .into_iter()
                .map(format_f64),
        );
        f.extend([
            self.mode.to_string(),
            self.raw_mode.to_string(),
            self.downsampled_count.to_string(),
            format_f64(self.near_origin_fraction),
            self.registered_count.to_string(),
            self.correspondences.to_string(),
            format_f64(self.residual_rms),
            self.iterations.to_string(),
            flag(self.bootstrap),
            flag(self.degenerate_warning),
            flag(self.numerical_failure),
            flag(self.empty_scan),
        ]);
        f
    }

    fn parse(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<Self> {
        let get = |i: usize| &rec[i];
        let float = |i: usize| parse_finite(path, line, FRAME_LOG_HEADER[i], get(i));
        let count = |i: usize| parse_field::<usize>(path, line, FRAME_LOG_HEADER[i], get(i));
        let mode = |i: usize| {
            get(i)
                .parse::<Mode>()
                .map_err(|e| parse_err(path, line, e.to_string()))
        };
        let flag = |i: usize| match get(i) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(path, line, format!("bad {} `{other}`", FRAME_LOG_HEADER[i]))),
        };
        let rotation = Rotation::from_wxyz(float(8)?, float(5)?, float(6)?, float(7)?)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        Ok(Self {
            frame: count(0)?,
            t: float(1)?,
            pose: Pose::new(rotation, Vector3::new(float(2)?, float(3)?, float(4)?)),
            mode: mode(9)?,
            raw_mode: mode(10)?,
            downsampled_count: count(11)?,
            near_origin_fraction: float(12)?,
            registered_count: count(13)?,
            correspondences: count(14)?,
            residual_rms: float(15)?,
            iterations: count(16)?,
            bootstrap: flag(17)?,
            degenerate_warning: flag(18)?,
            numerical_failure: flag(19)?,
            empty_scan: flag(20)?,
        })
    }
}

/// Streams the per-frame CSV log.
pub struct FrameLogWriter {
    path: PathBuf,
    out: csv::Writer<BufWriter<File>>,
}

impl FrameLogWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut out = csv::Writer::from_writer(create(&path)?);
        out.write_record(FRAME_LOG_HEADER)
            .map_err(|e| csv_io(&path, e))?;
        Ok(Self { path, out })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

impl FrameSink for FrameLogWriter {
    fn on_frame(&mut self, frame: &FrameResult) -> Result<()> {
        self.out
            .write_record(FrameLogRow::from(frame).fields())
            .map_err(|e| csv_io(&self.path, e))
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_frame_log(path: impl AsRef<Path>) -> Result<Vec<FrameLogRow>> {
    let path = path.as_ref();
    read_csv_rows(path, &FRAME_LOG_HEADER)?
        .iter()
        .map(|(line, rec)| FrameLogRow::parse(path, *line, rec))
        .collect()
}

// ---------------------------------------------------------------------------
// markers and scores

pub fn write_markers(path: impl AsRef<Path>, markers: &[MarkerPose]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(MARKER_HEADER).map_err(|e| csv_io(path, e))?;
    for m in markers {
        let p = &m.position;
        w.write_record([m.id.to_string(), format_f64(p.x), format_f64(p.y), format_f64(p.z)])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_markers(path: impl AsRef<Path>) -> Result<Vec<MarkerPose>> {
    let path = path.as_ref();
    read_csv_rows(path, &MARKER_HEADER)?
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            Ok(MarkerPose {
                id: parse_field(path, line, "id", &rec[0])?,
                position: Vector3::new(
                    parse_finite(path, line, "x", &rec[1])?,
                    parse_finite(path, line, "y", &rec[2])?,
                    parse_finite(path, line, "z", &rec[3])?,
                ),
            })
        })
        .collect()
}

/// One row per marker: `id,distance,points`.
pub fn write_score_csv(path: impl AsRef<Path>, report: &ScoreReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SCORE_HEADER).map_err(|e| csv_io(path, e))?;
    for m in &report.markers {
        w.write_record([m.id.to_string(), format_f64(m.distance), m.points.to_string()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width summary with one column per scoring bucket.
pub fn format_score_table(report: &ScoreReport) -> String {
    let [b1, b10, b100, rest] = report.bucket_counts;
    let mut s = String::new();
    s.push_str(&format!(
        "{:>8} {:>8} {:>9} {:>8} {:>7} {:>6}\n",
        "markers", "<= 1cm", "<= 10cm", "<= 100cm", "> 1m", "score"
    ));
    s.push_str(&format!(
        "{:>8} {:>8} {:>9} {:>8} {:>7} {:>6}\n",
        report.markers.len(),
        b1,
        b10,
        b100,
        rest,
        report.total
    ));
    s
}

// ---------------------------------------------------------------------------
// configuration

/// `key = value` pairs for every configuration field, in file order.
pub fn config_entries(c: &OdometryConfig) -> Vec<(&'static str, String)> {
    let g = c.profiles.general();
    let d = c.profiles.degenerate();
    let q = c.extrinsic.rotation.quaternion();
    let e = &c.extrinsic.translation;
    let f = format_f64;
    vec![
        ("adaptive_enabled", c.adaptive_enabled.to_string()),
        ("general.voxel_size", f(g.voxel_size)),
        ("general.search_radius", f(g.search_radius)),
        ("general.residual_margin", f(g.residual_margin)),
        ("degenerate.voxel_size", f(d.voxel_size)),
        ("degenerate.search_radius", f(d.search_radius)),
        ("degenerate.residual_margin", f(d.residual_margin)),
        ("detector.count_threshold", c.detector.count_threshold.to_string()),
        ("detector.near_origin_radius", f(c.detector.near_origin_radius)),
        (
            "detector.near_origin_fraction_threshold",
            f(c.detector.near_origin_fraction_threshold),
        ),
        ("detector.hysteresis_frames", c.detector.hysteresis_frames.to_string()),
        ("noise.gyro_noise", f(c.noise.gyro_noise)),
        ("noise.accel_noise", f(c.noise.accel_noise)),
        ("noise.gyro_bias_walk", f(c.noise.gyro_bias_walk)),
        ("noise.accel_bias_walk", f(c.noise.accel_bias_walk)),
        ("update.lidar_noise", f(c.update.lidar_noise)),
        ("update.max_iters", c.update.max_iters.to_string()),
        ("update.converge_eps", f(c.update.converge_eps)),
        ("update.knn_k", c.update.knn_k.to_string()),
        ("extrinsic.tx", f(e.x)),
        ("extrinsic.ty", f(e.y)),
        ("extrinsic.tz", f(e.z)),
        ("extrinsic.qx", f(q.i)),
        ("extrinsic.qy", f(q.j)),
        ("extrinsic.qz", f(q.k)),
        ("extrinsic.qw", f(q.w)),
        ("map.cell_size", f(c.map.cell_size)),
        ("map.capacity_per_cell", c.map.capacity_per_cell.to_string()),
        ("map.max_cells", c.map.max_cells.to_string()),
        ("map.min_spacing", f(c.map.min_spacing)),
        ("init.min_count", c.init.min_count.to_string()),
        ("init.max_accel_variance", f(c.init.max_accel_variance)),
        ("priors.rotation_std", f(c.priors.rotation_std)),
        ("priors.position_std", f(c.priors.position_std)),
        ("priors.velocity_std", f(c.priors.velocity_std)),
        ("priors.bias_gyro_std", f(c.priors.bias_gyro_std)),
        ("priors.bias_accel_std", f(c.priors.bias_accel_std)),
        ("priors.gravity_std", f(c.priors.gravity_std)),
    ]
}

pub fn format_config(c: &OdometryConfig) -> String {
    config_entries(c)
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn write_config(path: impl AsRef<Path>, c: &OdometryConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_config(c)).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<OdometryConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Parses `key = value` lines. Every key is required, unknown and repeated
/// keys are rejected, and `#` starts a comment line. `origin` labels errors.
pub fn parse_config(text: &str, origin: &Path) -> Result<OdometryConfig> {
    let known: Vec<&'static str> = config_entries(&OdometryConfig::default())
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let mut values: HashMap<&'static str, (usize, String)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| parse_err(origin, line, "expected `key = value`"))?;
        let key = key.trim();
        let Some(&known_key) = known.iter().find(|k| **k == key) else {
            return Err(Error::UnknownKey {
                key: key.to_string(),
                line,
            });
        };
        if let Some((first, _)) = values.insert(known_key, (line, value.trim().to_string())) {
            return Err(parse_err(origin, line, format!("`{key}` already set on line {first}")));
        }
    }
    if let Some(missing) = known.iter().find(|k| !values.contains_key(*k)) {
        return Err(Error::MissingKey(missing.to_string()));
    }

    let get = |key: &str| -> (usize, &str) {
        let (line, v) = &values[key];
        (*line, v.as_str())
    };
    let num = |key: &str| -> Result<f64> {
        let (line, v) = get(key);
        parse_finite(origin, line, key, v)
    };
    let count = |key: &str| -> Result<usize> {
        let (line, v) = get(key);
        parse_field(origin, line, key, v)
    };
    let profile = |prefix: &str, mode: Mode| -> Result<ParamProfile> {
        Ok(ParamProfile {
            voxel_size: num(&format!("{prefix}.voxel_size"))?,
            search_radius: num(&format!("{prefix}.search_radius"))?,
            residual_margin: num(&format!("{prefix}.residual_margin"))?,
            mode,
        })
    };
    let adaptive_enabled = {
        let (line, v) = get("adaptive_enabled");
        parse_field::<bool>(origin, line, "adaptive_enabled", v)?
    };
    let rotation = Rotation::from_wxyz(
        num("extrinsic.qw")?,
        num("extrinsic.qx")?,
        num("extrinsic.qy")?,
        num("extrinsic.qz")?,
    )
    .map_err(|e| Error::Config(format!("extrinsic rotation: {e}")))?;

    let config = OdometryConfig {
        profiles: ProfilePair::new(profile("general", Mode::General)?, profile("degenerate", Mode::Degenerate)?)?,
        detector: crate::degeneracy::DetectorConfig {
            count_threshold: count("detector.count_threshold")?,
            near_origin_radius: num("detector.near_origin_radius")?,
            near_origin_fraction_threshold: num("detector.near_origin_fraction_threshold")?,
            hysteresis_frames: count("detector.hysteresis_frames")?,
        },
        noise: crate::eskf::NoiseParams {
            gyro_noise: num("noise.gyro_noise")?,
            accel_noise: num("noise.accel_noise")?,
            gyro_bias_walk: num("noise.gyro_bias_walk")?,
            accel_bias_walk: num("noise.accel_bias_walk")?,
        },
        update: crate::eskf::UpdateOptions {
            lidar_noise: num("update.lidar_noise")?,
            max_iters: count("update.max_iters")?,
            converge_eps: num("update.converge_eps")?,
            knn_k: count("update.knn_k")?,
        },
        extrinsic: Pose::new(
            rotation,
            Vector3::new(num("extrinsic.tx")?, num("extrinsic.ty")?, num("extrinsic.tz")?),
        ),
        map: crate::voxel::MapConfig {
            cell_size: num("map.cell_size")?,
            capacity_per_cell: count("map.capacity_per_cell")?,
            max_cells: count("map.max_cells")?,
            min_spacing: num("map.min_spacing")?,
        },
        init: crate::pipeline::InitConfig {
            min_count: count("init.min_count")?,
            max_accel_variance: num("init.max_accel_variance")?,
        },
        priors: crate::eskf::InitPriors {
            rotation_std: num("priors.rotation_std")?,
            position_std: num("priors.position_std")?,
            velocity_std: num("priors.velocity_std")?,
            bias_gyro_std: num("priors.bias_gyro_std")?,
            bias_accel_std: num("priors.bias_accel_std")?,
            gravity_std: num("priors.gravity_std")?,
        },
        adaptive_enabled,
    };
    config.validate()?;
    Ok(config)
}
