//! Odometry calibration from a single tracked landmark.
//!
//! Wheel encoders predict how the vehicle moved between two samples; a
//! landmark fixed in the world tells how it actually moved. Fitting the
//! kinematic parameters (wheel radius, baseline or wheelbase) so the two
//! agree calibrates dead reckoning without a prescribed test track.
//!
//! - [`kinematics`]: differential-drive and bicycle motion models.
//! - [`pointcloud`]: extraction of the landmark from LiDAR frames.
//! - [`simulator`]: synthetic datasets and LiDAR frames.
//! - [`optimizer`]: bound-constrained damped Gauss-Newton.
//! - [`calibration`]: the landmark residual and the two-stage fit.
//! - [`dataset`]: records and CSV formats.

// `!(a < b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dataset;
pub mod kinematics;
pub mod optimizer;
pub mod pointcloud;
pub mod scenarios;
pub mod simulator;

pub use calibration::{
    calibrate, multi_restart, residuals, split_dataset, CalibrationError, CalibrationResult,
    ParameterStats, Restart, RestartConfig, RestartSummary, SplitConfig, StageBounds,
};
pub use dataset::{Dataset, DatasetError, Record};
pub use kinematics::{
    BodyMotion, DriveType, EncoderInterval, KinematicsError, Parameter, Pose2D, VehicleParams,
};
pub use optimizer::{
    minimize, Bound, JacobianMode, LeastSquaresProblem, OptimizationTrace, OptimizerConfig,
    Termination,
};
pub use pointcloud::{ExtractionConfig, LandmarkObservation, PointCloud};
pub use simulator::{simulate, NoiseSpec, SimConfig, Simulation};
