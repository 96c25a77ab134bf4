//! Experiment configuration: one TOML document per experiment.
//!
//! Unknown keys are rejected. Every error carries `path:line:column`.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use odocal::simulator::{ControlSegment, Cylinder, LidarSpec};
use odocal::{
    DriveType, ExtractionConfig, NoiseSpec, OptimizerConfig, Pose2D, RestartConfig, SimConfig,
    SplitConfig, VehicleParams,
};
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}",
            self.path.display(),
            self.line,
            self.column,
            self.message
        )
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub drive_type: DriveType,
    pub wheel_radius: f64,
    pub baseline: Option<f64>,
    pub wheelbase: Option<f64>,
}

impl VehicleSection {
    fn params(&self) -> Result<VehicleParams, String> {
        let params = match (self.drive_type, self.baseline, self.wheelbase) {
            (DriveType::DifferentialDrive, Some(b), None) => {
                VehicleParams::differential(self.wheel_radius, b)
            }
            (DriveType::Bicycle, None, Some(l)) => VehicleParams::bicycle(self.wheel_radius, l),
            (DriveType::DifferentialDrive, _, _) => {
                return Err("differential drive needs `baseline` and no `wheelbase`".into())
            }
            (DriveType::Bicycle, _, _) => {
                return Err("bicycle needs `wheelbase` and no `baseline`".into())
            }
        };
        params.validate().map_err(|e| e.to_string())?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub duration: f64,
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub wheel_rate: Option<f64>,
    pub steering: Option<f64>,
}

impl SegmentSpec {
    fn to_segment(self, drive: DriveType) -> Result<ControlSegment, String> {
        match (drive, self.left, self.right, self.wheel_rate, self.steering) {
            (DriveType::DifferentialDrive, Some(l), Some(r), None, None) => {
                Ok(ControlSegment::wheels(self.duration, l, r))
            }
            (DriveType::Bicycle, None, None, Some(w), Some(s)) => {
                Ok(ControlSegment::steered(self.duration, w, s))
            }
            (DriveType::DifferentialDrive, ..) => {
                Err("differential-drive segments take `left` and `right` wheel rates".into())
            }
            (DriveType::Bicycle, ..) => {
                Err("bicycle segments take `wheel_rate` and `steering`".into())
            }
        }
    }
}

fn default_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
    pub landmark: [f64; 2],
    #[serde(default)]
    pub initial_pose: [f64; 3],
    #[serde(default)]
    pub noise: NoiseSpec,
    pub segments: Vec<Spanned<SegmentSpec>>,
}

/// LiDAR geometry in degrees. Range noise comes from `simulation.noise.point_std`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSection {
    pub layers: usize,
    pub fov_vertical_deg: f64,
    pub angular_res_deg: f64,
    pub max_range: f64,
    pub mount_height: f64,
}

impl Default for LidarSection {
    fn default() -> Self {
        let d = LidarSpec::default();
        Self {
            layers: d.layers,
            fov_vertical_deg: d.fov_vertical.to_degrees(),
            angular_res_deg: d.angular_res.to_degrees(),
            max_range: d.max_range,
            mount_height: d.mount_height,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramesSection {
    pub enabled: bool,
    pub cylinder_radius: f64,
    pub cylinder_height: f64,
    pub ground_extent: f64,
    pub lidar: LidarSection,
}

impl Default for FramesSection {
    fn default() -> Self {
        Self {
            enabled: false,
            cylinder_radius: 0.05,
            cylinder_height: 0.4,
            ground_extent: 8.0,
            lidar: LidarSection::default(),
        }
    }
}

impl FramesSection {
    pub fn cylinder(&self) -> Cylinder {
        Cylinder {
            radius: self.cylinder_radius,
            height: self.cylinder_height,
        }
    }

    pub fn lidar(&self, range_std: f64) -> LidarSpec {
        LidarSpec {
            layers: self.lidar.layers,
            fov_vertical: self.lidar.fov_vertical_deg.to_radians(),
            angular_res: self.lidar.angular_res_deg.to_radians(),
            range_std,
            max_range: self.lidar.max_range,
            mount_height: self.lidar.mount_height,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    vehicle: Spanned<VehicleSection>,
    ground_truth: Option<Spanned<VehicleSection>>,
    simulation: Option<Spanned<SimulationSection>>,
    #[serde(default)]
    frames: FramesSection,
    #[serde(default)]
    extraction: ExtractionConfig,
    #[serde(default)]
    split: SplitConfig,
    #[serde(default)]
    optimizer: OptimizerConfig,
    #[serde(default)]
    restarts: RestartConfig,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Nominal (CAD) parameters: the restart distribution is centered here.
    pub nominal: VehicleParams,
    /// Used to simulate and to report relative errors.
    pub ground_truth: Option<VehicleParams>,
    pub simulation: Option<SimConfig>,
    pub frames: FramesSection,
    pub extraction: ExtractionConfig,
    pub split: SplitConfig,
    pub optimizer: OptimizerConfig,
    pub restarts: RestartConfig,
    source: PathBuf,
    simulation_span: Option<Range<usize>>,
    text: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let err_at = |span: Option<Range<usize>>, message: String| {
            let (line, column) = line_col(text, span.map_or(0, |s| s.start));
            ConfigError {
                path: path.to_path_buf(),
                line,
                column,
                message,
            }
        };
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| err_at(e.span(), e.message().trim().to_string()))?;

        let nominal = raw
            .vehicle
            .get_ref()
            .params()
            .map_err(|m| err_at(Some(raw.vehicle.span()), format!("vehicle: {m}")))?;
        let ground_truth = match &raw.ground_truth {
            None => None,
            Some(gt) => {
                let p = gt
                    .get_ref()
                    .params()
                    .map_err(|m| err_at(Some(gt.span()), format!("ground_truth: {m}")))?;
                if p.drive_type() != nominal.drive_type() {
                    return Err(err_at(
                        Some(gt.span()),
                        "ground_truth: drive type differs from vehicle".into(),
                    ));
                }
                Some(p)
            }
        };

        let simulation = match &raw.simulation {
            None => None,
            Some(sim) => {
                let s = sim.get_ref();
                let drive = nominal.drive_type();
                let segments = s
                    .segments
                    .iter()
                    .map(|seg| {
                        seg.get_ref()
                            .to_segment(drive)
                            .map_err(|m| err_at(Some(seg.span()), format!("segment: {m}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(SimConfig {
                    true_params: ground_truth.unwrap_or(nominal),
                    segments,
                    landmark_world: s.landmark,
                    initial_pose: Pose2D::new(
                        s.initial_pose[0],
                        s.initial_pose[1],
                        s.initial_pose[2],
                    ),
                    rate: s.rate,
                    noise: s.noise,
                    seed: s.seed,
                })
            }
        };

        let (lo, hi) = raw.restarts.bounds_factor;
        let checks = [
            (
                raw.split.diff_threshold > 0.0 && raw.split.steer_threshold > 0.0,
                "split",
                "split thresholds must be positive",
            ),
            (
                lo > 0.0 && lo < 1.0 && hi > 1.0 && hi.is_finite(),
                "restarts",
                "restarts.bounds_factor must satisfy 0 < lo < 1 < hi",
            ),
            (
                raw.restarts.restarts >= 1,
                "restarts",
                "restarts.restarts must be at least 1",
            ),
            (
                raw.restarts.fig_std >= 0.0,
                "restarts",
                "restarts.fig_std must be non-negative",
            ),
            (
                raw.frames.cylinder_radius > 0.0 && raw.frames.cylinder_height > 0.0,
                "frames",
                "frames cylinder dimensions must be positive",
            ),
        ];
        for (ok, table, message) in checks {
            if !ok {
                return Err(err_at(find_key(text, table), message.to_string()));
            }
        }
        raw.optimizer
            .validate()
            .map_err(|e| err_at(find_key(text, "optimizer"), format!("optimizer: {e}")))?;

        Ok(Self {
            output_dir: raw.output_dir,
            nominal,
            ground_truth,
            simulation,
            frames: raw.frames,
            extraction: raw.extraction,
            split: raw.split,
            optimizer: raw.optimizer,
            restarts: raw.restarts,
            source: path.to_path_buf(),
            simulation_span: raw.simulation.as_ref().map(|s| s.span()),
            text: text.to_string(),
        })
    }

    /// Error anchored at the `[simulation]` table, for problems only found
    /// once the simulator runs.
    pub fn simulation_error(&self, message: String) -> ConfigError {
        let (line, column) = line_col(
            &self.text,
            self.simulation_span.clone().map_or(0, |s| s.start),
        );
        ConfigError {
            path: self.source.clone(),
            line,
            column,
            message,
        }
    }
}

/// Span of the first line opening table `name`, so semantic errors still
/// point somewhere useful.
fn find_key(text: &str, name: &str) -> Option<Range<usize>> {
    let header = format!("[{name}");
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim_start();
        if t.starts_with(&header) {
            let start = offset + line.len() - t.len();
            return Some(start..start + t.len());
        }
        offset += line.len();
    }
    None
}
