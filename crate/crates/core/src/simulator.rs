//! Synthetic data generation.
//!
//! A vehicle follows a piecewise-constant control profile. The simulator
//! records wheel encoder increments and the body-frame position of one
//! world-fixed landmark at a fixed rate. Optionally it ray-casts a
//! multi-layer LiDAR against the ground and a cylindrical landmark.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Record};
use crate::kinematics::{
    body_motion, integrate_pose, DriveType, EncoderInterval, KinematicsError, Pose2D, VehicleParams,
};
use crate::pointcloud::{Point, PointCloud};

/// Closest the landmark may come to the vehicle origin, meters.
pub const MIN_LANDMARK_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("control profile has zero total duration")]
    EmptyProfile,
    #[error("landmark within {range:.3} m of the vehicle at t = {t:.3} s")]
    LandmarkCollision { t: f64, range: f64 },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Noise magnitudes. The defaults are artifact choices, not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Std of each wheel increment, radians per interval.
    pub encoder_std: f64,
    /// Std of each landmark coordinate, meters.
    pub landmark_std: f64,
    /// Std of LiDAR range returns, meters.
    pub point_std: f64,
    /// Probability that a record's landmark observation is lost.
    pub dropout_prob: f64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            encoder_std: 0.0,
            landmark_std: 0.0,
            point_std: 0.0,
            dropout_prob: 0.0,
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            encoder_std: 2e-4,
            landmark_std: 5e-3,
            point_std: 0.01,
            dropout_prob: 0.0,
        }
    }
}

/// Constant actuator command held over a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlInput {
    /// Left/right wheel rates, rad/s.
    Wheels { left: f64, right: f64 },
    /// Rear wheel rate in rad/s and combined steering angle in rad.
    Steered { wheel_rate: f64, steering: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    /// Seconds; must be a whole number of sampling periods.
    pub duration: f64,
    pub input: ControlInput,
}

impl ControlSegment {
    pub fn wheels(duration: f64, left: f64, right: f64) -> Self {
        Self {
            duration,
            input: ControlInput::Wheels { left, right },
        }
    }

    pub fn steered(duration: f64, wheel_rate: f64, steering: f64) -> Self {
        Self {
            duration,
            input: ControlInput::Steered {
                wheel_rate,
                steering,
            },
        }
    }

    fn interval(&self, dt: f64) -> EncoderInterval {
        match self.input {
            ControlInput::Wheels { left, right } => {
                EncoderInterval::differential(dt, left * dt, right * dt)
            }
            ControlInput::Steered {
                wheel_rate,
                steering,
            } => EncoderInterval::bicycle(dt, wheel_rate * dt, wheel_rate * dt, steering),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub true_params: VehicleParams,
    pub segments: Vec<ControlSegment>,
    pub landmark_world: [f64; 2],
    pub initial_pose: Pose2D,
    /// Sampling rate, Hz.
    pub rate: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SimConfig {
    pub fn drive_type(&self) -> DriveType {
        self.true_params.drive_type()
    }

    fn steps_per_segment(&self) -> Result<Vec<usize>, SimulationError> {
        let invalid = |msg: String| Err(SimulationError::InvalidConfig(msg));
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return invalid(format!("rate must be positive, got {}", self.rate));
        }
        if !self.landmark_world.iter().all(|v| v.is_finite()) {
            return invalid("landmark position must be finite".into());
        }
        self.true_params.validate()?;
        let n = self.noise;
        if ![n.encoder_std, n.landmark_std, n.point_std]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            || !(0.0..=1.0).contains(&n.dropout_prob)
        {
            return invalid("noise magnitudes must be non-negative, dropout in [0, 1]".into());
        }
        let total: f64 = self.segments.iter().map(|s| s.duration.max(0.0)).sum();
        if total * self.rate < 0.5 {
            return Err(SimulationError::EmptyProfile);
        }
        let mut steps = Vec::with_capacity(self.segments.len());
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration.is_finite() && seg.duration > 0.0) {
                return invalid(format!("segment {i}: duration must be positive"));
            }
            let exact = seg.duration * self.rate;
            let rounded = exact.round();
            if (exact - rounded).abs() > 1e-6 {
                return invalid(format!(
                    "segment {i}: duration {} s is not a multiple of the sampling period",
                    seg.duration
                ));
            }
            let interval = seg.interval(1.0 / self.rate);
            if interval.drive_type() != self.drive_type() {
                return invalid(format!(
                    "segment {i}: control does not match the {} model",
                    self.drive_type()
                ));
            }
            interval.validate()?;
            steps.push(rounded as usize);
        }
        Ok(steps)
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    /// Noise-free pose at every sample time, dropped records included.
    pub ground_truth: Vec<(f64, Pose2D)>,
    /// Noise-free encoder intervals, one per sample time.
    pub true_intervals: Vec<EncoderInterval>,
}

/// Runs the profile and records the dataset.
///
/// Record 0 sits at `t = 0` with a zero-motion interval. Record `k` carries
/// the encoder increments over `((k-1)/rate, k/rate]` and the landmark seen at
/// `k/rate`. Deterministic for a given config.
pub fn simulate(config: &SimConfig) -> Result<Simulation, SimulationError> {
    let steps = config.steps_per_segment()?;
    let dt = 1.0 / config.rate;
    let params = config.true_params;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoder_noise = Normal::new(0.0, config.noise.encoder_std).expect("validated std");
    let landmark_noise = Normal::new(0.0, config.noise.landmark_std).expect("validated std");

    let total: usize = steps.iter().sum();
    let mut records = Vec::with_capacity(total + 1);
    let mut ground_truth = Vec::with_capacity(total + 1);
    let mut true_intervals = Vec::with_capacity(total + 1);

    let first = config.segments[0].interval(dt);
    let rest = EncoderInterval {
        dphi_left: 0.0,
        dphi_right: 0.0,
        ..first
    };
    let commands = std::iter::once(rest).chain(
        config
            .segments
            .iter()
            .zip(&steps)
            .flat_map(|(seg, &n)| std::iter::repeat_n(seg.interval(dt), n)),
    );

    let mut pose = config.initial_pose;
    for (k, interval) in commands.enumerate() {
        let t = k as f64 / config.rate;
        if k > 0 {
            pose = integrate_pose(&pose, &body_motion(&interval, &params)?);
        }
        let truth = pose.world_to_body(config.landmark_world);
        let range = truth[0].hypot(truth[1]);
        if range < MIN_LANDMARK_RANGE {
            return Err(SimulationError::LandmarkCollision { t, range });
        }

        // fixed draw order keeps every noise stream aligned across configs
        let measured = EncoderInterval {
            dphi_left: interval.dphi_left + encoder_noise.sample(&mut rng),
            dphi_right: interval.dphi_right + encoder_noise.sample(&mut rng),
            ..interval
        };
        let landmark = [
            truth[0] + landmark_noise.sample(&mut rng),
            truth[1] + landmark_noise.sample(&mut rng),
        ];
        let dropped = rng.random::<f64>() < config.noise.dropout_prob;

        ground_truth.push((t, pose));
        true_intervals.push(interval);
        if !dropped {
            records.push(Record {
                t,
                interval: measured,
                landmark,
            });
        }
    }

    let mut dataset = Dataset::new(config.drive_type(), records);
    dataset.meta = Some(format!(
        "simulated {} vehicle, {} Hz, seed {}",
        config.drive_type(),
        config.rate,
        config.seed
    ));
    Ok(Simulation {
        dataset,
        ground_truth,
        true_intervals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub radius: f64,
    pub height: f64,
}

/// A spinning multi-layer LiDAR with evenly spaced layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    pub layers: usize,
    /// Total vertical field of view centered on the horizon, radians.
    pub fov_vertical: f64,
    /// Horizontal angular step, radians.
    pub angular_res: f64,
    /// Range noise std, meters.
    pub range_std: f64,
    pub max_range: f64,
    /// Sensor height above the ground, meters.
    pub mount_height: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            layers: 64,
            fov_vertical: 30f64.to_radians(),
            angular_res: 0.2f64.to_radians(),
            range_std: 0.01,
            max_range: 30.0,
            mount_height: 0.2,
        }
    }
}

/// Nearest forward hit of a ray from `(0, 0, h)` with a vertical cylinder
/// shell standing on the ground at body-frame `center`.
fn cylinder_hit(dir: &[f64; 3], h: f64, center: [f64; 2], cyl: &Cylinder) -> Option<f64> {
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a == 0.0 {
        return None;
    }
    let b = dir[0] * center[0] + dir[1] * center[1];
    let c = center[0] * center[0] + center[1] * center[1] - cyl.radius * cyl.radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (b - disc.sqrt()) / a;
    if t <= 0.0 {
        return None;
    }
    let z = h + t * dir[2];
    (0.0..=cyl.height).contains(&z).then_some(t)
}

/// Ray-casts one LiDAR sweep from `pose` against a flat ground (limited to
/// `ground_extent` meters horizontally) and the landmark cylinder. Points are
/// returned in the body frame, ground at `z = 0`.
pub fn render_cylinder_cloud(
    pose: &Pose2D,
    landmark_world: [f64; 2],
    cyl: &Cylinder,
    lidar: &LidarSpec,
    ground_extent: f64,
    seed: u64,
) -> PointCloud {
    let center = pose.world_to_body(landmark_world);
    let h = lidar.mount_height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, lidar.range_std.max(0.0)).expect("finite std");

    let columns = ((2.0 * PI / lidar.angular_res).round() as usize).max(1);
    let elevation = |i: usize| {
        if lidar.layers <= 1 {
            0.0
        } else {
            -lidar.fov_vertical / 2.0 + lidar.fov_vertical * i as f64 / (lidar.layers - 1) as f64
        }
    };

    let mut points = Vec::new();
    for layer in 0..lidar.layers {
        let e = elevation(layer).clamp(-FRAC_PI_2, FRAC_PI_2);
        let (se, ce) = e.sin_cos();
        for col in 0..columns {
            let az = -PI + 2.0 * PI * col as f64 / columns as f64;
            let (sa, ca) = az.sin_cos();
            let dir = [ce * ca, ce * sa, se];

            let mut hit = cylinder_hit(&dir, h, center, cyl);
            if dir[2] < 0.0 {
                let t = h / -dir[2];
                if t * ce <= ground_extent && hit.is_none_or(|c| t < c) {
                    hit = Some(t);
                }
            }
            let Some(t) = hit.filter(|t| *t <= lidar.max_range) else {
                continue;
            };
            let range = t + noise.sample(&mut rng);
            points.push(Point::new(
                range * dir[0],
                range * dir[1],
                h + range * dir[2],
            ));
        }
    }
    PointCloud::new(points)
}

/// Renders one frame per ground-truth pose in parallel; frame `k` uses seed
/// `seed ^ k`.
pub fn render_frames(
    ground_truth: &[(f64, Pose2D)],
    landmark_world: [f64; 2],
    cyl: &Cylinder,
    lidar: &LidarSpec,
    ground_extent: f64,
    seed: u64,
) -> Vec<PointCloud> {
    ground_truth
        .par_iter()
        .enumerate()
        .map(|(k, (_, pose))| {
            render_cylinder_cloud(
                pose,
                landmark_world,
                cyl,
                lidar,
                ground_extent,
                seed ^ k as u64,
            )
        })
        .collect()
}
