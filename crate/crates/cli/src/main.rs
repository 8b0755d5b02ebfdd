//! `lio`: run odometry on recorded or synthetic data, generate synthetic
//! datasets, and score trajectories against markers.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure, 3 config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lio_core::eval::{score_trajectory, Alignment};
use lio_core::io;
use lio_core::pipeline::{run_sequence, FrameSink, OdometryConfig};
use lio_core::synth::{MotionPreset, ScenePreset, SequenceSpec};
use lio_core::{Error, Mode};

#[derive(Parser)]
#[command(name = "lio", version, about = "LiDAR-inertial odometry with adaptive voxelization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run odometry over a scan file and an IMU stream.
    Run {
        /// Flat key = value configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        out_traj: PathBuf,
        #[arg(long)]
        out_log: PathBuf,
        /// Always use the general profile. Overrides the config file.
        #[arg(long)]
        no_adaptive: bool,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// room, corridor, room-corridor-room or spiral-stair
        #[arg(long)]
        scene: ScenePreset,
        /// traverse or static
        #[arg(long, default_value = "traverse")]
        traj_preset: MotionPreset,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of scans; the preset length when omitted.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Score a TUM trajectory against ground-truth markers.
    Score {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        markers: PathBuf,
        /// Rigidly align the trajectory to the markers first.
        #[arg(long)]
        align: bool,
        /// Per-marker CSV; `<traj>.score.csv` when omitted.
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
}

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

struct Failure {
    code: u8,
    error: Error,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure(_) | Error::PropagationGap { .. } => EXIT_NUMERICAL,
        Error::Config(_) | Error::MissingKey(_) | Error::UnknownKey { .. } => EXIT_CONFIG,
        _ => EXIT_INPUT,
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            code: exit_code(&error),
            error,
        }
    }
}

/// Anything wrong with the config file's contents is a config error; a
/// missing or unreadable file is an input error.
fn load_config(path: Option<&Path>) -> Result<OdometryConfig, Failure> {
    let Some(path) = path else {
        return Ok(OdometryConfig::default());
    };
    io::load_config(path).map_err(|error| Failure {
        code: match error {
            Error::Io { .. } => EXIT_INPUT,
            _ => EXIT_CONFIG,
        },
        error,
    })
}

struct Progress {
    frames: usize,
    degenerate: usize,
    warnings: usize,
    failures: usize,
}

impl FrameSink for Progress {
    fn on_frame(&mut self, frame: &lio_core::FrameResult) -> lio_core::Result<()> {
        self.frames += 1;
        self.degenerate += usize::from(frame.profile.mode == Mode::Degenerate);
        self.warnings += usize::from(frame.flags.degenerate_warning);
        self.failures += usize::from(frame.flags.numerical_failure);
        if self.frames.is_multiple_of(50) {
            eprintln!("frame {} t={:.3}", frame.frame, frame.t);
        }
        Ok(())
    }
}

fn cmd_run(
    config: Option<&Path>,
    scans: &Path,
    imu: &Path,
    out_traj: &Path,
    out_log: &Path,
    no_adaptive: bool,
) -> Result<(), Failure> {
    let mut config = load_config(config)?;
    if no_adaptive {
        config.adaptive_enabled = false;
    }
    config.validate().map_err(|error| Failure {
        code: EXIT_CONFIG,
        error,
    })?;
    let scans = io::read_scan_file(scans)?;
    let imu = io::read_imu_file(imu)?;
    eprintln!("{} scans, {} imu samples", scans.len(), imu.len());

    let mut traj = io::TumWriter::create(out_traj)?;
    let mut log = io::FrameLogWriter::create(out_log)?;
    let mut progress = Progress {
        frames: 0,
        degenerate: 0,
        warnings: 0,
        failures: 0,
    };
    run_sequence(&config, &scans, &imu, &mut [&mut traj, &mut log, &mut progress])?;
    eprintln!(
        "done: {} frames, {} degenerate, {} correspondence warnings, {} failed updates",
        progress.frames, progress.degenerate, progress.warnings, progress.failures
    );
    Ok(())
}

fn cmd_synth(
    scene: ScenePreset,
    motion: MotionPreset,
    out_dir: &Path,
    seed: u64,
    frames: Option<usize>,
) -> Result<(), Failure> {
    let mut spec = SequenceSpec::preset(scene, motion, seed);
    if let Some(n) = frames {
        spec.frames = n;
    }
    let data = spec.generate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    io::write_scan_file(out_dir.join("scans.bin"), &data.scans)?;
    io::write_imu_file(out_dir.join("imu.csv"), &data.imu)?;
    io::write_trajectory_tum(out_dir.join("gt.tum"), &data.ground_truth)?;
    io::write_markers(out_dir.join("markers.csv"), &data.markers)?;
    io::write_config(out_dir.join("config.txt"), &OdometryConfig::default())?;
    eprintln!(
        "{}: {} scans, {} imu samples, {} markers in {}",
        scene.name(),
        data.scans.len(),
        data.imu.len(),
        data.markers.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_score(traj: &Path, markers: &Path, align: bool, out_csv: Option<&Path>) -> Result<(), Failure> {
    let trajectory = io::read_trajectory_tum(traj)?;
    let markers = io::read_markers(markers)?;
    let alignment = if align { Alignment::Rigid } else { Alignment::None };
    let report = score_trajectory(&trajectory, &markers, alignment)?;
    print!("{}", io::format_score_table(&report));
    let csv_path = out_csv.map_or_else(
        || {
            let mut name = traj.as_os_str().to_owned();
            name.push(".score.csv");
            PathBuf::from(name)
        },
        Path::to_path_buf,
    );
    io::write_score_csv(&csv_path, &report)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run {
            config,
            scans,
            imu,
            out_traj,
            out_log,
            no_adaptive,
        } => cmd_run(config.as_deref(), scans, imu, out_traj, out_log, *no_adaptive),
        Command::Synth {
            scene,
            traj_preset,
            out_dir,
            seed,
            frames,
        } => cmd_synth(*scene, *traj_preset, out_dir, *seed, *frames),
        Command::Score {
            traj,
            markers,
            align,
            out_csv,
        } => cmd_score(traj, markers, *align, out_csv.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
