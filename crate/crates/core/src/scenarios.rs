//! Reference scenarios: a small differential-drive robot over 40 s and a
//! car-sized bicycle-model vehicle over 90 s, both sampled at 10 Hz.
//!
//! The profiles are shaped so the default split thresholds put 108/293
//! (robot) and 77/824 (car) records on the straight/turn sides.

use crate::kinematics::{Pose2D, VehicleParams};
use crate::simulator::{ControlSegment, NoiseSpec, SimConfig};

pub const ROBOT_WHEEL_RADIUS: f64 = 0.033;
pub const ROBOT_BASELINE: f64 = 0.16;
pub const CAR_WHEEL_RADIUS: f64 = 0.3672;
pub const CAR_WHEELBASE: f64 = 2.62;

pub fn robot_params() -> VehicleParams {
    VehicleParams::differential(ROBOT_WHEEL_RADIUS, ROBOT_BASELINE)
}

pub fn car_params() -> VehicleParams {
    VehicleParams::bicycle(CAR_WHEEL_RADIUS, CAR_WHEELBASE)
}

/// 40 s differential-drive run: 10.7 s straight, 29.3 s turning.
pub fn robot(noise: NoiseSpec, seed: u64) -> SimConfig {
    SimConfig {
        true_params: robot_params(),
        segments: vec![
            ControlSegment::wheels(3.0, 6.0, 6.0),
            ControlSegment::wheels(6.0, 4.5, 6.5),
            ControlSegment::wheels(4.0, 6.0, 6.0),
            ControlSegment::wheels(8.0, 6.5, 4.5),
            ControlSegment::wheels(3.7, 6.0, 6.0),
            ControlSegment::wheels(7.3, 5.0, 6.0),
            ControlSegment::wheels(8.0, 6.0, 4.0),
        ],
        landmark_world: [1.5, 2.0],
        initial_pose: Pose2D::default(),
        rate: 10.0,
        noise,
        seed,
    }
}

/// 90 s bicycle-model run: 7.6 s straight, 82.4 s turning.
pub fn car(noise: NoiseSpec, seed: u64) -> SimConfig {
    SimConfig {
        true_params: car_params(),
        segments: vec![
            ControlSegment::steered(4.0, 10.0, 0.0),
            ControlSegment::steered(20.0, 10.0, 0.15),
            ControlSegment::steered(3.6, 10.0, 0.0),
            ControlSegment::steered(25.0, 10.0, -0.12),
            ControlSegment::steered(20.0, 10.0, 0.2),
            ControlSegment::steered(17.4, 10.0, -0.08),
        ],
        landmark_world: [25.0, 30.0],
        initial_pose: Pose2D::default(),
        rate: 10.0,
        noise,
        seed,
    }
}
