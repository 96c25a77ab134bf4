//! Two-stage kinematic calibration against a tracked landmark.
//!
//! For each consecutive record pair the landmark seen before the interval is
//! pushed through the candidate body motion and compared with the landmark
//! seen after it. The wheel radius is fitted on straight records first, then
//! the baseline (or wheelbase) on turning records with the radius frozen.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Transition};
use crate::kinematics::{
    body_motion, body_motion_partial, predict_landmark, predict_landmark_partial, DriveType,
    KinematicsError, Parameter, VehicleParams,
};
use crate::optimizer::{
    minimize, Bound, LeastSquaresProblem, OptimizationTrace, OptimizeError, OptimizerConfig,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least two consecutive records, found {0} usable pairs")]
    TooFewRecords(usize),
    #[error("dataset is {data} but parameters describe a {params} vehicle")]
    DriveTypeMismatch { data: DriveType, params: DriveType },
    #[error("radius stage impossible: no straight records")]
    RadiusStageImpossible,
    #[error("{0} stage impossible: no turning records")]
    GeometryStageImpossible(&'static str),
    #[error("invalid bounds for {name}: [{lo}, {hi}]")]
    InvalidBounds {
        name: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("invalid restart settings: {0}")]
    InvalidRestarts(&'static str),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("{stage} stage: {source}")]
    Optimize {
        stage: &'static str,
        source: OptimizeError,
    },
}

/// Thresholds separating straight from turning records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// On `|dphi_r - dphi_l| / dt`, rad/s (differential drive).
    pub diff_threshold: f64,
    /// On `|steering|`, rad (bicycle).
    pub steer_threshold: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            diff_threshold: 0.01,
            steer_threshold: 0.01,
        }
    }
}

impl SplitConfig {
    pub fn is_straight(&self, interval: &crate::kinematics::EncoderInterval) -> bool {
        match interval.steering {
            Some(delta) => delta.abs() < self.steer_threshold,
            None => {
                (interval.dphi_right - interval.dphi_left).abs() / interval.dt < self.diff_threshold
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitWarning {
    NoStraightRecords,
    NoTurnRecords,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub straight: Dataset,
    pub turn: Dataset,
}

impl Split {
    pub fn counts(&self) -> (usize, usize) {
        (self.straight.len(), self.turn.len())
    }

    /// Set when one side of the partition is empty.
    pub fn warning(&self) -> Option<SplitWarning> {
        if self.straight.is_empty() {
            Some(SplitWarning::NoStraightRecords)
        } else if self.turn.is_empty() {
            Some(SplitWarning::NoTurnRecords)
        } else {
            None
        }
    }
}

/// Partitions records by their own interval. Order is preserved on both sides.
pub fn split_dataset(data: &Dataset, cfg: &SplitConfig) -> Result<Split, CalibrationError> {
    if data.is_empty() {
        return Err(CalibrationError::EmptyDataset);
    }
    let (straight, turn) = data
        .records
        .iter()
        .partition(|r| cfg.is_straight(&r.interval));
    let part = |records| Dataset {
        drive_type: data.drive_type,
        records,
        meta: data.meta.clone(),
    };
    Ok(Split {
        straight: part(straight),
        turn: part(turn),
    })
}

fn check_drive(data: &Dataset, params: &VehicleParams) -> Result<(), CalibrationError> {
    if data.drive_type != params.drive_type() {
        return Err(CalibrationError::DriveTypeMismatch {
            data: data.drive_type,
            params: params.drive_type(),
        });
    }
    Ok(())
}

fn transition_residual(
    tr: &Transition,
    params: &VehicleParams,
) -> Result<[f64; 2], KinematicsError> {
    let motion = body_motion(&tr.interval, params)?;
    let predicted = predict_landmark(tr.prev_landmark, &motion);
    Ok([predicted[0] - tr.landmark[0], predicted[1] - tr.landmark[1]])
}

/// Stacked residuals, two per consecutive record pair. Half the squared norm
/// is the calibration loss.
pub fn residuals(data: &Dataset, params: &VehicleParams) -> Result<Vec<f64>, CalibrationError> {
    check_drive(data, params)?;
    if data.len() < 2 {
        return Err(CalibrationError::TooFewRecords(0));
    }
    let mut out = Vec::with_capacity(2 * (data.len() - 1));
    for tr in data.transitions() {
        out.extend(transition_residual(&tr, params)?);
    }
    Ok(out)
}

/// One-parameter calibration problem over a fixed set of transitions.
#[derive(Debug, Clone)]
pub struct StageProblem {
    transitions: Vec<Transition>,
    base: VehicleParams,
    parameter: Parameter,
}

impl StageProblem {
    pub fn new(
        data: &Dataset,
        base: VehicleParams,
        parameter: Parameter,
    ) -> Result<Self, CalibrationError> {
        check_drive(data, &base)?;
        let transitions: Vec<_> = data.transitions().collect();
        if transitions.is_empty() {
            return Err(CalibrationError::TooFewRecords(0));
        }
        Ok(Self {
            transitions,
            base,
            parameter,
        })
    }

    pub fn params_at(&self, value: f64) -> VehicleParams {
        self.base.with(self.parameter, value)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

impl LeastSquaresProblem for StageProblem {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let params = self.params_at(x[0]);
        let mut out = Vec::with_capacity(2 * self.transitions.len());
        for tr in &self.transitions {
            // non-positive parameters have no motion; the optimizer backs off
            let r = transition_residual(tr, &params).unwrap_or([f64::NAN; 2]);
            out.extend(r);
        }
        out
    }

    fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let params = self.params_at(x[0]);
        let mut jac = DMatrix::zeros(2 * self.transitions.len(), 1);
        for (k, tr) in self.transitions.iter().enumerate() {
            let (Ok(motion), Ok(d_motion)) = (
                body_motion(&tr.interval, &params),
                body_motion_partial(&tr.interval, &params, self.parameter),
            ) else {
                jac.fill(f64::NAN);
                return Some(jac);
            };
            let d = predict_landmark_partial(tr.prev_landmark, &motion, &d_motion);
            jac[(2 * k, 0)] = d[0];
            jac[(2 * k + 1, 0)] = d[1];
        }
        Some(jac)
    }
}

/// Search intervals for the two calibrated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBounds {
    pub wheel_radius: Bound,
    pub geometry: Bound,
}

impl StageBounds {
    /// `[lo_factor * nominal, hi_factor * nominal]` for each parameter.
    pub fn around(nominal: &VehicleParams, lo_factor: f64, hi_factor: f64) -> Self {
        let b = |v: f64| Bound::new(lo_factor * v, hi_factor * v);
        Self {
            wheel_radius: b(nominal.wheel_radius()),
            geometry: b(nominal.geometry()),
        }
    }

    pub fn get(&self, parameter: Parameter) -> Bound {
        match parameter {
            Parameter::WheelRadius => self.wheel_radius,
            Parameter::Geometry => self.geometry,
        }
    }

    fn validate(&self, params: &VehicleParams) -> Result<(), CalibrationError> {
        for p in [Parameter::WheelRadius, Parameter::Geometry] {
            let b = self.get(p);
            if !(b.lo > 0.0 && b.lo < b.hi && b.hi.is_finite()) {
                return Err(CalibrationError::InvalidBounds {
                    name: params.parameter_name(p),
                    lo: b.lo,
                    hi: b.hi,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restart {
    pub initial: VehicleParams,
    pub estimate: VehicleParams,
    pub radius_trace: OptimizationTrace,
    pub geometry_trace: OptimizationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params_hat: VehicleParams,
    pub radius_trace: OptimizationTrace,
    pub geometry_trace: OptimizationTrace,
    /// Records on the (straight, turn) side of the split.
    pub split_counts: (usize, usize),
    pub restarts: Vec<Restart>,
}

fn run_stages(
    split: &Split,
    initial: &VehicleParams,
    opt_cfg: &OptimizerConfig,
    bounds: &StageBounds,
) -> Result<Restart, CalibrationError> {
    let stage = |data: &Dataset,
                 base: VehicleParams,
                 parameter: Parameter,
                 name: &'static str|
     -> Result<OptimizationTrace, CalibrationError> {
        let problem = StageProblem::new(data, base, parameter)?;
        let bound = bounds.get(parameter);
        let x0 = bound.clamp(base.get(parameter));
        minimize(&problem, &[x0], &[bound], opt_cfg).map_err(|source| CalibrationError::Optimize {
            stage: name,
            source,
        })
    };

    let geometry_name = initial.parameter_name(Parameter::Geometry);
    let radius_trace = stage(
        &split.straight,
        *initial,
        Parameter::WheelRadius,
        "wheel_radius",
    )
    .map_err(|e| match e {
        CalibrationError::TooFewRecords(_) => CalibrationError::RadiusStageImpossible,
        e => e,
    })?;
    let with_radius = initial.with(Parameter::WheelRadius, radius_trace.solution()[0]);
    let geometry_trace = stage(&split.turn, with_radius, Parameter::Geometry, geometry_name)
        .map_err(|e| match e {
            CalibrationError::TooFewRecords(_) => {
                CalibrationError::GeometryStageImpossible(geometry_name)
            }
            e => e,
        })?;
    let estimate = with_radius.with(Parameter::Geometry, geometry_trace.solution()[0]);
    Ok(Restart {
        initial: *initial,
        estimate,
        radius_trace,
        geometry_trace,
    })
}

fn prepare(
    data: &Dataset,
    initial: &VehicleParams,
    split_cfg: &SplitConfig,
    bounds: &StageBounds,
) -> Result<Split, CalibrationError> {
    check_drive(data, initial)?;
    initial.validate()?;
    bounds.validate(initial)?;
    let split = split_dataset(data, split_cfg)?;
    match split.warning() {
        Some(SplitWarning::NoStraightRecords) => Err(CalibrationError::RadiusStageImpossible),
        Some(SplitWarning::NoTurnRecords) => Err(CalibrationError::GeometryStageImpossible(
            initial.parameter_name(Parameter::Geometry),
        )),
        None => Ok(split),
    }
}

/// Fits the wheel radius on straight records, then the baseline or wheelbase
/// on turning records with that radius fixed.
pub fn calibrate(
    data: &Dataset,
    initial: &VehicleParams,
    split_cfg: &SplitConfig,
    opt_cfg: &OptimizerConfig,
    bounds: &StageBounds,
) -> Result<CalibrationResult, CalibrationError> {
    let split = prepare(data, initial, split_cfg, bounds)?;
    let restart = run_stages(&split, initial, opt_cfg, bounds)?;
    Ok(CalibrationResult {
        params_hat: restart.estimate,
        radius_trace: restart.radius_trace.clone(),
        geometry_trace: restart.geometry_trace.clone(),
        split_counts: split.counts(),
        restarts: vec![restart],
    })
}

/// Settings for [`multi_restart`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestartConfig {
    pub restarts: usize,
    /// Std of the initial guesses as a fraction of the nominal value.
    pub fig_std: f64,
    pub seed: u64,
    /// Bounds as multiples of the nominal value.
    pub bounds_factor: (f64, f64),
}

impl Default for RestartConfig {
    fn default() -> Self {
        Self {
            restarts: 100,
            fig_std: 0.1,
            seed: 0,
            bounds_factor: (0.25, 4.0),
        }
    }
}

/// Summary of one parameter across restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub ground_truth: Option<f64>,
    /// `|mean - truth| / truth`, when the truth is known.
    pub relative_error: Option<f64>,
}

impl ParameterStats {
    pub fn from_samples(name: &str, samples: &[f64], ground_truth: Option<f64>) -> Self {
        let n = samples.len();
        assert!(n > 0, "statistics need at least one sample");
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            name: name.to_string(),
            mean,
            std: var.sqrt(),
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[n - 1],
            ground_truth,
            relative_error: ground_truth.map(|t| (mean - t).abs() / t),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub split_counts: (usize, usize),
    pub wheel_radius: ParameterStats,
    pub geometry: ParameterStats,
    /// Mean wall time per (radius, geometry) stage, seconds.
    pub mean_stage_time: (f64, f64),
    pub runs: Vec<Restart>,
}

/// Draws an initial guess per restart from a normal distribution centered on
/// `nominal`, truncated to the bounds, and calibrates from each in parallel.
pub fn multi_restart(
    data: &Dataset,
    nominal: &VehicleParams,
    split_cfg: &SplitConfig,
    opt_cfg: &OptimizerConfig,
    restart_cfg: &RestartConfig,
    ground_truth: Option<&VehicleParams>,
) -> Result<RestartSummary, CalibrationError> {
    if restart_cfg.restarts == 0 {
        return Err(CalibrationError::InvalidRestarts(
            "restarts must be at least 1",
        ));
    }
    if !(restart_cfg.fig_std >= 0.0 && restart_cfg.fig_std.is_finite()) {
        return Err(CalibrationError::InvalidRestarts(
            "fig_std must be non-negative",
        ));
    }
    let (lo, hi) = restart_cfg.bounds_factor;
    let bounds = StageBounds::around(nominal, lo, hi);
    let split = prepare(data, nominal, split_cfg, &bounds)?;

    // draw sequentially so results do not depend on thread scheduling
    let mut rng = ChaCha8Rng::seed_from_u64(restart_cfg.seed);
    let mut draw = |center: f64, bound: Bound| {
        for _ in 0..100 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = center * (1.0 + restart_cfg.fig_std * z);
            if bound.contains(v) {
                return v;
            }
        }
        bound.clamp(center)
    };
    let initials: Vec<VehicleParams> = (0..restart_cfg.restarts)
        .map(|_| {
            let r = draw(nominal.wheel_radius(), bounds.wheel_radius);
            let g = draw(nominal.geometry(), bounds.geometry);
            nominal
                .with(Parameter::WheelRadius, r)
                .with(Parameter::Geometry, g)
        })
        .collect();

    let runs = initials
        .par_iter()
        .map(|init| run_stages(&split, init, opt_cfg, &bounds))
        .collect::<Result<Vec<_>, _>>()?;

    let values = |p: Parameter| runs.iter().map(|r| r.estimate.get(p)).collect::<Vec<_>>();
    let stats = |p: Parameter| {
        ParameterStats::from_samples(
            nominal.parameter_name(p),
            &values(p),
            ground_truth.map(|t| t.get(p)),
        )
    };
    let n = runs.len() as f64;
    Ok(RestartSummary {
        split_counts: split.counts(),
        wheel_radius: stats(Parameter::WheelRadius),
        geometry: stats(Parameter::Geometry),
        mean_stage_time: (
            runs.iter().map(|r| r.radius_trace.wall_time).sum::<f64>() / n,
            runs.iter().map(|r| r.geometry_trace.wall_time).sum::<f64>() / n,
        ),
        runs,
    })
}
