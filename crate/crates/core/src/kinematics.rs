//! Forward motion models for differential-drive and bicycle vehicles.
//!
//! Every model reduces an encoder interval to a [`BodyMotion`]: the chord of a
//! constant-curvature arc expressed in the body frame at the start of the
//! interval, plus the heading change over the interval. Controls are assumed
//! constant inside an interval, which makes the arc model exact.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this heading change the arc chord is evaluated by its series limit.
pub const ARC_SERIES_THRESHOLD: f64 = 1e-8;

/// Below this heading change the chord derivatives use their Taylor series.
const DERIVATIVE_SERIES_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("drive type mismatch: model expects {expected}, input is {found}")]
    DriveTypeMismatch {
        expected: DriveType,
        found: DriveType,
    },
    #[error("steering angle {0} rad is outside (-pi/2, pi/2)")]
    SteeringOutOfRange(f64),
    #[error("inner ({inner}) and outer ({outer}) steering angles have opposite signs")]
    InconsistentSteering { inner: f64, outer: f64 },
    #[error("interval duration must be positive and finite, got {0}")]
    InvalidInterval(f64),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can land exactly on 2*pi for tiny negative inputs
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Planar vehicle pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-pi, pi]`.
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// Expresses a world-frame point in this pose's body frame.
    pub fn world_to_body(&self, point: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = point[0] - self.x;
        let dy = point[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Expresses a body-frame point in the world frame.
    pub fn body_to_world(&self, point: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * point[0] - s * point[1],
            self.y + s * point[0] + c * point[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveType {
    DifferentialDrive,
    Bicycle,
}

impl fmt::Display for DriveType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriveType::DifferentialDrive => f.write_str("differential drive"),
            DriveType::Bicycle => f.write_str("bicycle"),
        }
    }
}

/// Actuator increments over one sampling interval.
///
/// For bicycle datasets `dphi_left`/`dphi_right` hold the rear-left and
/// rear-right wheel increments and `steering` the combined steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderInterval {
    pub dt: f64,
    pub dphi_left: f64,
    pub dphi_right: f64,
    pub steering: Option<f64>,
}

impl EncoderInterval {
    pub fn differential(dt: f64, dphi_left: f64, dphi_right: f64) -> Self {
        Self {
            dt,
            dphi_left,
            dphi_right,
            steering: None,
        }
    }

    pub fn bicycle(dt: f64, dphi_left: f64, dphi_right: f64, steering: f64) -> Self {
        Self {
            dt,
            dphi_left,
            dphi_right,
            steering: Some(steering),
        }
    }

    pub fn drive_type(&self) -> DriveType {
        if self.steering.is_some() {
            DriveType::Bicycle
        } else {
            DriveType::DifferentialDrive
        }
    }

    /// Mean wheel angle increment.
    pub fn mean_increment(&self) -> f64 {
        (self.dphi_left + self.dphi_right) / 2.0
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(KinematicsError::InvalidInterval(self.dt));
        }
        if let Some(delta) = self.steering {
            if !(delta.is_finite() && delta.abs() < FRAC_PI_2) {
                return Err(KinematicsError::SteeringOutOfRange(delta));
            }
        }
        Ok(())
    }
}

/// Selects one calibratable parameter independent of drive type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    WheelRadius,
    /// Baseline for differential drive, wheelbase for the bicycle model.
    Geometry,
}

/// The kinematic parameter set under calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "drive_type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VehicleParams {
    DifferentialDrive { wheel_radius: f64, baseline: f64 },
    Bicycle { wheel_radius: f64, wheelbase: f64 },
}

impl VehicleParams {
    pub fn differential(wheel_radius: f64, baseline: f64) -> Self {
        VehicleParams::DifferentialDrive {
            wheel_radius,
            baseline,
        }
    }

    pub fn bicycle(wheel_radius: f64, wheelbase: f64) -> Self {
        VehicleParams::Bicycle {
            wheel_radius,
            wheelbase,
        }
    }

    pub fn drive_type(&self) -> DriveType {
        match self {
            VehicleParams::DifferentialDrive { .. } => DriveType::DifferentialDrive,
            VehicleParams::Bicycle { .. } => DriveType::Bicycle,
        }
    }

    pub fn wheel_radius(&self) -> f64 {
        match *self {
            VehicleParams::DifferentialDrive { wheel_radius, .. }
            | VehicleParams::Bicycle { wheel_radius, .. } => wheel_radius,
        }
    }

    /// Baseline or wheelbase, depending on drive type.
    pub fn geometry(&self) -> f64 {
        match *self {
            VehicleParams::DifferentialDrive { baseline, .. } => baseline,
            VehicleParams::Bicycle { wheelbase, .. } => wheelbase,
        }
    }

    pub fn get(&self, parameter: Parameter) -> f64 {
        match parameter {
            Parameter::WheelRadius => self.wheel_radius(),
            Parameter::Geometry => self.geometry(),
        }
    }

    pub fn with(mut self, parameter: Parameter, value: f64) -> Self {
        match (&mut self, parameter) {
            (VehicleParams::DifferentialDrive { wheel_radius, .. }, Parameter::WheelRadius)
            | (VehicleParams::Bicycle { wheel_radius, .. }, Parameter::WheelRadius) => {
                *wheel_radius = value
            }
            (VehicleParams::DifferentialDrive { baseline, .. }, Parameter::Geometry) => {
                *baseline = value
            }
            (VehicleParams::Bicycle { wheelbase, .. }, Parameter::Geometry) => *wheelbase = value,
        }
        self
    }

    pub fn parameter_name(&self, parameter: Parameter) -> &'static str {
        match (self.drive_type(), parameter) {
            (_, Parameter::WheelRadius) => "wheel_radius",
            (DriveType::DifferentialDrive, Parameter::Geometry) => "baseline",
            (DriveType::Bicycle, Parameter::Geometry) => "wheelbase",
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for parameter in [Parameter::WheelRadius, Parameter::Geometry] {
            let value = self.get(parameter);
            if !(value.is_finite() && value > 0.0) {
                return Err(KinematicsError::NonPositiveParameter {
                    name: self.parameter_name(parameter),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Body-frame chord and heading change over one interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyMotion {
    pub rho_x: f64,
    pub rho_y: f64,
    pub dtheta: f64,
}

impl BodyMotion {
    pub fn new(rho_x: f64, rho_y: f64, dtheta: f64) -> Self {
        Self {
            rho_x,
            rho_y,
            dtheta,
        }
    }

    /// Chord of a constant-curvature arc of length `arc_length` turning by `dtheta`.
    pub fn from_arc(arc_length: f64, dtheta: f64) -> Self {
        Self {
            rho_x: arc_length * sinc(dtheta),
            rho_y: arc_length * cosc(dtheta),
            dtheta,
        }
    }

    /// Derivative of [`BodyMotion::from_arc`] for the given derivatives of its inputs.
    fn arc_derivative(arc_length: f64, dtheta: f64, d_arc: f64, d_dtheta: f64) -> Self {
        Self {
            rho_x: d_arc * sinc(dtheta) + arc_length * d_dtheta * sinc_derivative(dtheta),
            rho_y: d_arc * cosc(dtheta) + arc_length * d_dtheta * cosc_derivative(dtheta),
            dtheta: d_dtheta,
        }
    }

    pub fn translation_norm(&self) -> f64 {
        self.rho_x.hypot(self.rho_y)
    }
}

/// `sin(a) / a`
fn sinc(a: f64) -> f64 {
    if a.abs() < ARC_SERIES_THRESHOLD {
        1.0 - a * a / 6.0
    } else {
        a.sin() / a
    }
}

/// `(1 - cos(a)) / a`, written without the cancellation in `1 - cos(a)`.
fn cosc(a: f64) -> f64 {
    if a.abs() < ARC_SERIES_THRESHOLD {
        a / 2.0
    } else {
        let h = (a / 2.0).sin();
        2.0 * h * h / a
    }
}

fn sinc_derivative(a: f64) -> f64 {
    if a.abs() < DERIVATIVE_SERIES_THRESHOLD {
        let a2 = a * a;
        a * (-1.0 / 3.0 + a2 * (1.0 / 30.0 + a2 * (-1.0 / 840.0 + a2 / 45360.0)))
    } else {
        (a * a.cos() - a.sin()) / (a * a)
    }
}

fn cosc_derivative(a: f64) -> f64 {
    if a.abs() < DERIVATIVE_SERIES_THRESHOLD {
        let a2 = a * a;
        0.5 + a2 * (-1.0 / 8.0 + a2 * (1.0 / 144.0 + a2 * (-1.0 / 5760.0 + a2 / 403200.0)))
    } else {
        let h = (a / 2.0).sin();
        (a * a.sin() - 2.0 * h * h) / (a * a)
    }
}

fn expect_drive(
    interval: &EncoderInterval,
    params: &VehicleParams,
    expected: DriveType,
) -> Result<(), KinematicsError> {
    for found in [params.drive_type(), interval.drive_type()] {
        if found != expected {
            return Err(KinematicsError::DriveTypeMismatch { expected, found });
        }
    }
    params.validate()?;
    interval.validate()
}

/// Arc length and heading change for the interval.
fn arc(interval: &EncoderInterval, params: &VehicleParams) -> (f64, f64) {
    let r = params.wheel_radius();
    let arc_length = interval.mean_increment() * r;
    let dtheta = match (*params, interval.steering) {
        (VehicleParams::DifferentialDrive { baseline, .. }, _) => {
            (interval.dphi_right - interval.dphi_left) * r / baseline
        }
        (VehicleParams::Bicycle { wheelbase, .. }, Some(delta)) => {
            arc_length * delta.tan() / wheelbase
        }
        (VehicleParams::Bicycle { .. }, None) => unreachable!("validated by expect_drive"),
    };
    (arc_length, dtheta)
}

/// Arc length and heading change of the interval under `params`, before the
/// chord is formed.
pub fn arc_length_and_heading(
    interval: &EncoderInterval,
    params: &VehicleParams,
) -> Result<(f64, f64), KinematicsError> {
    expect_drive(interval, params, params.drive_type())?;
    Ok(arc(interval, params))
}

/// Differential-drive motion: arc length `r (dphi_l + dphi_r) / 2`, heading
/// change `r (dphi_r - dphi_l) / B`.
pub fn diff_drive_motion(
    interval: &EncoderInterval,
    params: &VehicleParams,
) -> Result<BodyMotion, KinematicsError> {
    expect_drive(interval, params, DriveType::DifferentialDrive)?;
    let (arc_length, dtheta) = arc(interval, params);
    Ok(BodyMotion::from_arc(arc_length, dtheta))
}

/// Bicycle motion: arc length `r * mean(dphi_rl, dphi_rr)`, heading change
/// `arc_length * tan(delta) / L`.
pub fn bicycle_motion(
    interval: &EncoderInterval,
    params: &VehicleParams,
) -> Result<BodyMotion, KinematicsError> {
    expect_drive(interval, params, DriveType::Bicycle)?;
    let (arc_length, dtheta) = arc(interval, params);
    Ok(BodyMotion::from_arc(arc_length, dtheta))
}

/// Dispatches to the model matching `params`.
pub fn body_motion(
    interval: &EncoderInterval,
    params: &VehicleParams,
) -> Result<BodyMotion, KinematicsError> {
    match params.drive_type() {
        DriveType::DifferentialDrive => diff_drive_motion(interval, params),
        DriveType::Bicycle => bicycle_motion(interval, params),
    }
}

/// Partial derivative of [`body_motion`] with respect to one parameter.
pub fn body_motion_partial(
    interval: &EncoderInterval,
    params: &VehicleParams,
    parameter: Parameter,
) -> Result<BodyMotion, KinematicsError> {
    expect_drive(interval, params, params.drive_type())?;
    let (arc_length, dtheta) = arc(interval, params);
    // arc length is linear in r and independent of B/L; dtheta is linear in r
    // and inversely proportional to B/L for both models.
    let (d_arc, d_dtheta) = match parameter {
        Parameter::WheelRadius => (interval.mean_increment(), dtheta / params.wheel_radius()),
        Parameter::Geometry => (0.0, -dtheta / params.geometry()),
    };
    Ok(BodyMotion::arc_derivative(
        arc_length, dtheta, d_arc, d_dtheta,
    ))
}

/// Combines per-wheel Ackermann steering angles into the bicycle-model angle
/// by averaging cotangents, which is exact for an ideal Ackermann linkage.
pub fn combine_ackermann_steering(
    delta_inner: f64,
    delta_outer: f64,
) -> Result<f64, KinematicsError> {
    for delta in [delta_inner, delta_outer] {
        if !(delta.is_finite() && delta.abs() < FRAC_PI_2) {
            return Err(KinematicsError::SteeringOutOfRange(delta));
        }
    }
    if delta_inner * delta_outer < 0.0 {
        return Err(KinematicsError::InconsistentSteering {
            inner: delta_inner,
            outer: delta_outer,
        });
    }
    if delta_inner == 0.0 || delta_outer == 0.0 {
        // one straight wheel puts the turning center at infinity
        return Ok(0.0);
    }
    // tan(delta) = 2 / (cot(di) + cot(do)), kept in tangent form to stay finite
    let (ti, to) = (delta_inner.tan(), delta_outer.tan());
    Ok((2.0 * ti * to / (ti + to)).atan())
}

/// Applies a body-frame motion to a world-frame pose.
pub fn integrate_pose(pose: &Pose2D, motion: &BodyMotion) -> Pose2D {
    let [x, y] = pose.body_to_world([motion.rho_x, motion.rho_y]);
    Pose2D::new(x, y, pose.theta + motion.dtheta)
}

/// Expected body-frame landmark position after `motion`, given its position
/// before: `R(-dtheta) (prev - rho)`.
pub fn predict_landmark(prev: [f64; 2], motion: &BodyMotion) -> [f64; 2] {
    let (s, c) = motion.dtheta.sin_cos();
    let dx = prev[0] - motion.rho_x;
    let dy = prev[1] - motion.rho_y;
    [c * dx + s * dy, -s * dx + c * dy]
}

/// Derivative of [`predict_landmark`] given the derivative `d_motion` of the motion.
pub fn predict_landmark_partial(
    prev: [f64; 2],
    motion: &BodyMotion,
    d_motion: &BodyMotion,
) -> [f64; 2] {
    let (s, c) = motion.dtheta.sin_cos();
    let dx = prev[0] - motion.rho_x;
    let dy = prev[1] - motion.rho_y;
    // d/dθ of R(-θ) v is R(-θ) applied to (v_y, -v_x)
    let (rx, ry) = (dy, -dx);
    let w = d_motion.dtheta;
    [
        w * (c * rx + s * ry) - (c * d_motion.rho_x + s * d_motion.rho_y),
        w * (-s * rx + c * ry) - (-s * d_motion.rho_x + c * d_motion.rho_y),
    ]
}
