//! LiDAR-inertial odometry with scene-adaptive registration parameters.
//!
//! An iterated error-state Kalman filter fuses IMU propagation with
//! point-to-plane registration against an incremental voxel map. Each scan is
//! classified as open or narrow; narrow scenes switch to a finer voxel size,
//! a shorter neighbor search radius and a tighter plane acceptance margin.

pub mod degeneracy;
pub mod error;
pub mod eskf;
pub mod eval;
pub mod geom;
pub mod io;
pub mod pipeline;
pub mod plane;
pub mod synth;
pub mod voxel;

pub use degeneracy::{DegeneracyReport, DetectorConfig, Mode, ParamProfile, ProfilePair};
pub use error::{Error, Result};
pub use eskf::{NavState, NoiseParams, UpdateOptions, UpdateStats};
pub use geom::{ImuSample, LidarScan, Point3, Pose, Rotation};
pub use pipeline::{run_sequence, Engine, FrameResult, FrameSink, OdometryConfig};
