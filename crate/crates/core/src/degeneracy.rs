//! Corridor-like scene detection and parameter profile selection.
//!
//! Narrow surroundings show up as a downsampled scan that is both small and
//! concentrated near the sensor. When that holds for long enough, the
//! odometry switches to a profile with a finer voxel size, a smaller search
//! radius and a tighter plane margin, which raises the number of
//! correspondences available to the update.

use crate::error::{Error, Result};
use crate::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    General,
    Degenerate,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::General => "General",
            Mode::Degenerate => "Degenerate",
        }
    }

    fn flipped(self) -> Mode {
        match self {
            Mode::General => Mode::Degenerate,
            Mode::Degenerate => Mode::General,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "General" | "general" => Ok(Mode::General),
            "Degenerate" | "degenerate" => Ok(Mode::Degenerate),
            other => Err(Error::InvalidInput(format!("unknown mode `{other}`"))),
        }
    }
}

/// Voxelization and correspondence parameters (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamProfile {
    pub voxel_size: f64,
    pub search_radius: f64,
    pub residual_margin: f64,
    pub mode: Mode,
}

pub const GENERAL_PROFILE: ParamProfile = ParamProfile {
    voxel_size: 0.2,
    search_radius: 3.0,
    residual_margin: 0.05,
    mode: Mode::General,
};

pub const DEGENERATE_PROFILE: ParamProfile = ParamProfile {
    voxel_size: 0.1,
    search_radius: 2.0,
    residual_margin: 0.025,
    mode: Mode::Degenerate,
};

/// The two profiles the detector chooses between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePair {
    general: ParamProfile,
    degenerate: ParamProfile,
}

impl Default for ProfilePair {
    fn default() -> Self {
        Self {
            general: GENERAL_PROFILE,
            degenerate: DEGENERATE_PROFILE,
        }
    }
}

impl ProfilePair {
    /// Every degenerate parameter must be strictly smaller than its general
    /// counterpart.
    pub fn new(general: ParamProfile, degenerate: ParamProfile) -> Result<Self> {
        let positive = [general, degenerate].iter().all(|p| {
            [p.voxel_size, p.search_radius, p.residual_margin]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0)
        });
        if !positive {
            return Err(Error::Config("profile values must be positive".into()));
        }
        if !(degenerate.voxel_size < general.voxel_size
            && degenerate.search_radius < general.search_radius
            && degenerate.residual_margin < general.residual_margin)
        {
            return Err(Error::Config(format!(
                "degenerate profile {degenerate:?} must be strictly finer than general {general:?}"
            )));
        }
        Ok(Self {
            general: ParamProfile {
                mode: Mode::General,
                ..general
            },
            degenerate: ParamProfile {
                mode: Mode::Degenerate,
                ..degenerate
            },
        })
    }

    pub fn general(&self) -> &ParamProfile {
        &self.general
    }

    pub fn degenerate(&self) -> &ParamProfile {
        &self.degenerate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Downsampled scans with fewer points than this count as small.
    pub count_threshold: usize,
    /// Range defining "near the sensor", meters.
    pub near_origin_radius: f64,
    /// Minimum share of occupied voxels within `near_origin_radius`.
    pub near_origin_fraction_threshold: f64,
    /// Consecutive opposite verdicts needed before switching mode.
    pub hysteresis_frames: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            count_threshold: 1200,
            near_origin_radius: 5.0,
            near_origin_fraction_threshold: 0.8,
            hysteresis_frames: 3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = self.near_origin_fraction_threshold;
        if self.count_threshold == 0
            || self.hysteresis_frames == 0
            || !(self.near_origin_radius > 0.0)
            || !(frac > 0.0 && frac <= 1.0)
        {
            return Err(Error::Config(format!("invalid detector config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DegeneracyReport {
    pub downsampled_count: usize,
    pub near_origin_fraction: f64,
    /// This frame's verdict before hysteresis.
    pub raw: Mode,
    /// Mode in effect after hysteresis.
    pub decision: Mode,
    /// Consecutive frames whose raw verdict disagreed with `decision`.
    pub opposing_streak: usize,
    /// Frames since `decision` last changed.
    pub frames_in_mode: usize,
    /// No points were available; decision carried over.
    pub empty_scan: bool,
}

/// Classifies a body-frame scan downsampled at the general voxel size.
pub fn detect_degeneracy(
    scan_body_downsampled: &[Point3],
    cfg: &DetectorConfig,
    prev: &DegeneracyReport,
) -> DegeneracyReport {
    if scan_body_downsampled.is_empty() {
        return DegeneracyReport {
            downsampled_count: 0,
            near_origin_fraction: 0.0,
            raw: prev.decision,
            empty_scan: true,
            frames_in_mode: prev.frames_in_mode + 1,
            ..*prev
        };
    }

    let count = scan_body_downsampled.len();
    let near = scan_body_downsampled
        .iter()
        .filter(|p| p.norm() < cfg.near_origin_radius)
        .count();
    let fraction = near as f64 / count as f64;
    let raw = if count < cfg.count_threshold && fraction >= cfg.near_origin_fraction_threshold {
        Mode::Degenerate
    } else {
        Mode::General
    };

    let mut decision = prev.decision;
    let mut streak = if raw == prev.decision {
        0
    } else {
        prev.opposing_streak + 1
    };
    let mut frames_in_mode = prev.frames_in_mode + 1;
    if streak >= cfg.hysteresis_frames {
        decision = decision.flipped();
        streak = 0;
        frames_in_mode = 0;
    }

    DegeneracyReport {
        downsampled_count: count,
        near_origin_fraction: fraction,
        raw,
        decision,
        opposing_streak: streak,
        frames_in_mode,
        empty_scan: false,
    }
}

pub fn select_params(report: &DegeneracyReport, profiles: &ProfilePair) -> ParamProfile {
    match report.decision {
        Mode::General => profiles.general,
        Mode::Degenerate => profiles.degenerate,
    }
}
