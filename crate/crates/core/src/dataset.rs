//! Synchronized encoder/landmark records and their CSV formats.
//!
//! All files are UTF-8 CSV with a header row, `.` decimal separator and LF
//! line endings. Floats are written in shortest round-trip form so a file
//! read back reproduces the in-memory values bit for bit.
//!
//! | file        | columns                                     |
//! |-------------|---------------------------------------------|
//! | dataset     | `t,dt,dphi_left,dphi_right,steering,lx,ly`  |
//! | trajectory  | `t,x,y,theta`                               |
//! | landmarks   | `t,lx,ly`                                   |
//! | frame       | `x,y,z`                                     |
//!
//! `steering` is empty for differential-drive datasets.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{DriveType, EncoderInterval, KinematicsError, Pose2D};
use crate::pointcloud::{LandmarkObservation, Point, PointCloud};

/// Two records are consecutive when `t_prev + dt` lands on `t` within this
/// fraction of `dt`.
pub const CONTIGUITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("record {index}: timestamps must be strictly increasing")]
    NonMonotonic { index: usize },
    #[error("record {index}: {source}")]
    InvalidInterval {
        index: usize,
        source: KinematicsError,
    },
    #[error("record {index}: landmark position is not finite")]
    NonFiniteLandmark { index: usize },
    #[error("record {index}: drive type {found} differs from dataset drive type {expected}")]
    MixedDriveTypes {
        index: usize,
        expected: DriveType,
        found: DriveType,
    },
    #[error("expected header `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One synchronized sample: the encoder interval ending at `t` and the
/// landmark observed at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub interval: EncoderInterval,
    pub landmark: [f64; 2],
}

impl Record {
    pub fn observation(&self) -> LandmarkObservation {
        LandmarkObservation {
            timestamp: self.t,
            position: self.landmark,
        }
    }
}

/// A consecutive pair of records usable as one residual term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub prev_landmark: [f64; 2],
    pub interval: EncoderInterval,
    pub landmark: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub drive_type: DriveType,
    pub records: Vec<Record>,
    /// Free-form provenance, not persisted in the CSV.
    #[serde(default)]
    pub meta: Option<String>,
}

impl Dataset {
    pub fn new(drive_type: DriveType, records: Vec<Record>) -> Self {
        Self {
            drive_type,
            records,
            meta: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks ordering, interval validity, drive-type consistency and finiteness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (index, rec) in self.records.iter().enumerate() {
            rec.interval
                .validate()
                .map_err(|source| DatasetError::InvalidInterval { index, source })?;
            if rec.interval.drive_type() != self.drive_type {
                return Err(DatasetError::MixedDriveTypes {
                    index,
                    expected: self.drive_type,
                    found: rec.interval.drive_type(),
                });
            }
            if !rec.landmark.iter().all(|v| v.is_finite()) {
                return Err(DatasetError::NonFiniteLandmark { index });
            }
            if index > 0 && !(rec.t > self.records[index - 1].t) {
                return Err(DatasetError::NonMonotonic { index });
            }
        }
        Ok(())
    }

    /// Residual terms: every record whose interval starts exactly where the
    /// previous record's timestamp sits. Gaps left by dropped observations or
    /// by subsetting break the chain and contribute no term.
    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        self.records.windows(2).filter_map(|w| {
            let (prev, cur) = (&w[0], &w[1]);
            let gap = (prev.t + cur.interval.dt - cur.t).abs();
            (gap <= CONTIGUITY_TOLERANCE * cur.interval.dt).then_some(Transition {
                prev_landmark: prev.landmark,
                interval: cur.interval,
                landmark: cur.landmark,
            })
        })
    }

    /// Shifts every timestamp by `offset` seconds.
    pub fn time_shifted(&self, offset: f64) -> Dataset {
        let mut out = self.clone();
        for r in &mut out.records {
            r.t += offset;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        write_rows(
            writer,
            &DATASET_HEADER,
            self.records.iter().map(|r| DatasetRow {
                t: r.t,
                dt: r.interval.dt,
                dphi_left: r.interval.dphi_left,
                dphi_right: r.interval.dphi_right,
                steering: r.interval.steering,
                lx: r.landmark[0],
                ly: r.landmark[1],
            }),
        )
    }

    /// Reads a dataset file. The drive type follows from the `steering` column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
        let mut records = Vec::new();
        for row in read_rows::<_, DatasetRow>(reader, &DATASET_HEADER)? {
            records.push(Record {
                t: row.t,
                interval: EncoderInterval {
                    dt: row.dt,
                    dphi_left: row.dphi_left,
                    dphi_right: row.dphi_right,
                    steering: row.steering,
                },
                landmark: [row.lx, row.ly],
            });
        }
        let first = records.first().ok_or(DatasetError::Empty)?;
        let dataset = Dataset::new(first.interval.drive_type(), records);
        dataset.validate()?;
        Ok(dataset)
    }
}

const DATASET_HEADER: [&str; 7] = ["t", "dt", "dphi_left", "dphi_right", "steering", "lx", "ly"];
const POSE_HEADER: [&str; 4] = ["t", "x", "y", "theta"];
const LANDMARK_HEADER: [&str; 3] = ["t", "lx", "ly"];
const POINT_HEADER: [&str; 3] = ["x", "y", "z"];

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    t: f64,
    dt: f64,
    dphi_left: f64,
    dphi_right: f64,
    steering: Option<f64>,
    lx: f64,
    ly: f64,
}

#[derive(Serialize, Deserialize)]
struct PoseRow {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRow {
    t: f64,
    lx: f64,
    ly: f64,
}

#[derive(Serialize, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    z: f64,
}

/// Writes `header` then one line per row, so even an empty file has a header.
fn write_rows<W: Write, T: Serialize>(
    writer: W,
    header: &[&str],
    rows: impl Iterator<Item = T>,
) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows after checking the header matches `header` exactly.
fn read_rows<R: Read, T: DeserializeOwned>(
    reader: R,
    header: &[&str],
) -> Result<Vec<T>, DatasetError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let found = rdr.headers()?;
    if found.iter().ne(header.iter().copied()) {
        return Err(DatasetError::BadHeader {
            expected: header.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    rdr.deserialize().map(|row| Ok(row?)).collect()
}

pub fn write_trajectory_csv<W: Write>(
    writer: W,
    trajectory: &[(f64, Pose2D)],
) -> Result<(), DatasetError> {
    write_rows(
        writer,
        &POSE_HEADER,
        trajectory.iter().map(|(t, p)| PoseRow {
            t: *t,
            x: p.x,
            y: p.y,
            theta: p.theta,
        }),
    )
}

pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<Vec<(f64, Pose2D)>, DatasetError> {
    Ok(read_rows::<_, PoseRow>(reader, &POSE_HEADER)?
        .into_iter()
        .map(|row| (row.t, Pose2D::new(row.x, row.y, row.theta)))
        .collect())
}

pub fn write_landmarks_csv<W: Write>(
    writer: W,
    observations: &[LandmarkObservation],
) -> Result<(), DatasetError> {
    write_rows(
        writer,
        &LANDMARK_HEADER,
        observations.iter().map(|o| LandmarkRow {
            t: o.timestamp,
            lx: o.position[0],
            ly: o.position[1],
        }),
    )
}

pub fn read_landmarks_csv<R: Read>(reader: R) -> Result<Vec<LandmarkObservation>, DatasetError> {
    Ok(read_rows::<_, LandmarkRow>(reader, &LANDMARK_HEADER)?
        .into_iter()
        .map(|row| LandmarkObservation {
            timestamp: row.t,
            position: [row.lx, row.ly],
        })
        .collect())
}

pub fn write_frame_csv<W: Write>(writer: W, cloud: &PointCloud) -> Result<(), DatasetError> {
    write_rows(
        writer,
        &POINT_HEADER,
        cloud.points.iter().map(|p| PointRow {
            x: p.x,
            y: p.y,
            z: p.z,
        }),
    )
}

pub fn read_frame_csv<R: Read>(reader: R) -> Result<PointCloud, DatasetError> {
    Ok(read_rows::<_, PointRow>(reader, &POINT_HEADER)?
        .into_iter()
        .map(|row| Point::new(row.x, row.y, row.z))
        .collect())
}
