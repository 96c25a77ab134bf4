//! Landmark extraction from 3-D range scans.
//!
//! The chain is crop box, pass-through, voxel downsampling, ground removal by
//! perpendicular-plane RANSAC, and euclidean clustering. The cluster nearest
//! the previous observation is reported as the landmark.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Point3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointCloudError {
    #[error("crop box corners are inverted on axis {axis}: min {min} > max {max}")]
    InvertedBox { axis: usize, min: f64, max: f64 },
    #[error("pass-through interval is inverted: lo {lo} > hi {hi}")]
    InvertedInterval { lo: f64, hi: f64 },
    #[error("voxel leaf size must be positive, got {0}")]
    InvalidLeaf(f64),
    #[error("plane axis must be a non-zero finite vector")]
    ZeroAxis,
    #[error("invalid RANSAC settings: {0}")]
    InvalidRansac(&'static str),
    #[error("invalid clustering settings: {0}")]
    InvalidCluster(&'static str),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn select(&self, keep: impl Fn(&Point) -> bool) -> PointCloud {
        PointCloud::new(self.points.iter().copied().filter(|p| keep(p)).collect())
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// A connected set of points from [`euclidean_cluster`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Ascending indices into the clustered cloud.
    pub point_indices: Vec<usize>,
    pub centroid: Point,
}

/// Landmark position in the vehicle body frame at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkObservation {
    pub timestamp: f64,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

fn centroid<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Point> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p.coords;
        n += 1;
    }
    (n > 0).then(|| Point::from(sum / n as f64))
}

/// Keeps points inside the inclusive box, or outside it when `negative` is set.
pub fn crop_box(
    cloud: &PointCloud,
    min_corner: [f64; 3],
    max_corner: [f64; 3],
    negative: bool,
) -> Result<PointCloud, PointCloudError> {
    for axis in 0..3 {
        if min_corner[axis] > max_corner[axis] {
            return Err(PointCloudError::InvertedBox {
                axis,
                min: min_corner[axis],
                max: max_corner[axis],
            });
        }
    }
    Ok(cloud.select(|p| {
        let inside = (0..3).all(|i| p[i] >= min_corner[i] && p[i] <= max_corner[i]);
        inside != negative
    }))
}

/// Keeps points whose `axis` coordinate lies in `[lo, hi]`.
pub fn pass_through(
    cloud: &PointCloud,
    axis: Axis,
    lo: f64,
    hi: f64,
) -> Result<PointCloud, PointCloudError> {
    if lo > hi {
        return Err(PointCloudError::InvertedInterval { lo, hi });
    }
    let i = axis.index();
    Ok(cloud.select(|p| p[i] >= lo && p[i] <= hi))
}

/// Integer grid cell containing `p` for the given cell size.
pub fn grid_cell(p: &Point, size: f64) -> [i64; 3] {
    [0, 1, 2].map(|i| (p[i] / size).floor() as i64)
}

/// Replaces the points of every occupied `leaf`-sized voxel by their centroid.
///
/// Output order follows the first appearance of each voxel in the input.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud, PointCloudError> {
    if !(leaf.is_finite() && leaf > 0.0) {
        return Err(PointCloudError::InvalidLeaf(leaf));
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in &cloud.points {
        let idx = *slot.entry(grid_cell(p, leaf)).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[idx].0 += p.coords;
        sums[idx].1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(sum, n)| Point::from(sum / n as f64))
        .collect())
}

/// Plane `normal . p + offset = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Plane through three points, `None` when they are collinear.
    pub fn through(a: &Point, b: &Point, c: &Point) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return None;
        }
        let normal = n / norm;
        Some(Plane {
            normal,
            offset: -normal.dot(&a.coords),
        })
    }

    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Direction the plane normal must align with.
    pub axis: [f64; 3],
    /// Maximum angle between the hypothesis normal and `axis`, radians.
    pub angle_tol: f64,
    /// Inlier distance threshold, meters.
    pub dist_tol: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            axis: [0.0, 0.0, 1.0],
            angle_tol: 0.1,
            dist_tol: 0.05,
            iters: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSegmentation {
    pub ground: PointCloud,
    pub rest: PointCloud,
    /// The winning plane, if any admissible hypothesis was found.
    pub plane: Option<Plane>,
}

/// RANSAC ground removal restricted to planes whose normal lies within
/// `angle_tol` of `axis`. The admissible plane with the most inliers wins;
/// ties go to the smaller mean absolute residual, then to the earlier draw.
pub fn segment_ground_ransac(
    cloud: &PointCloud,
    config: &RansacConfig,
) -> Result<GroundSegmentation, PointCloudError> {
    let axis = Vector3::from(config.axis);
    let axis_norm = axis.norm();
    if !(axis_norm > 0.0 && axis_norm.is_finite()) {
        return Err(PointCloudError::ZeroAxis);
    }
    let axis = axis / axis_norm;
    if config.iters == 0 {
        return Err(PointCloudError::InvalidRansac("iters must be at least 1"));
    }
    if !(config.dist_tol > 0.0) {
        return Err(PointCloudError::InvalidRansac("dist_tol must be positive"));
    }
    if !(config.angle_tol >= 0.0) {
        return Err(PointCloudError::InvalidRansac(
            "angle_tol must be non-negative",
        ));
    }
    let n = cloud.len();
    if n < 3 {
        return Ok(GroundSegmentation {
            ground: PointCloud::default(),
            rest: cloud.clone(),
            plane: None,
        });
    }

    let min_cos = config.angle_tol.min(std::f64::consts::FRAC_PI_2).cos();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // (inliers, sum of absolute residuals, plane)
    let mut best: Option<(usize, f64, Plane)> = None;
    for _ in 0..config.iters {
        let sample = rand::seq::index::sample(&mut rng, n, 3);
        let [a, b, c] = [0, 1, 2].map(|i| &cloud.points[sample.index(i)]);
        let Some(plane) = Plane::through(a, b, c) else {
            continue;
        };
        if plane.normal.dot(&axis).abs() < min_cos {
            continue;
        }
        let mut inliers = 0usize;
        let mut residual = 0.0;
        for p in &cloud.points {
            let d = plane.signed_distance(p).abs();
            if d <= config.dist_tol {
                inliers += 1;
                residual += d;
            }
        }
        let better = match &best {
            None => true,
            Some((count, sum, _)) => {
                inliers > *count
                    || (inliers == *count
                        && residual / (inliers.max(1) as f64) < sum / ((*count).max(1) as f64))
            }
        };
        if better {
            best = Some((inliers, residual, plane));
        }
    }

    let Some((_, _, plane)) = best else {
        return Ok(GroundSegmentation {
            ground: PointCloud::default(),
            rest: cloud.clone(),
            plane: None,
        });
    };
    let (ground, rest): (Vec<Point>, Vec<Point>) = cloud
        .points
        .iter()
        .partition(|p| plane.signed_distance(p).abs() <= config.dist_tol);
    Ok(GroundSegmentation {
        ground: PointCloud::new(ground),
        rest: PointCloud::new(rest),
        plane: Some(plane),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Linking distance, meters.
    pub tolerance: f64,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.1,
            min_size: 5,
            max_size: 100_000,
        }
    }
}

/// Single-linkage clustering: connected components of the graph joining points
/// at most `tolerance` apart.
///
/// Neighbors are found through a hash grid with cell size `tolerance`, so only
/// the 27 surrounding cells are searched. Components outside
/// `[min_size, max_size]` are dropped; the rest are sorted by size descending,
/// ties broken by smallest member index.
pub fn euclidean_cluster(
    cloud: &PointCloud,
    config: &ClusterConfig,
) -> Result<Vec<Cluster>, PointCloudError> {
    if !(config.tolerance > 0.0 && config.tolerance.is_finite()) {
        return Err(PointCloudError::InvalidCluster(
            "tolerance must be positive",
        ));
    }
    if config.min_size == 0 || config.min_size > config.max_size {
        return Err(PointCloudError::InvalidCluster(
            "sizes must satisfy 1 <= min_size <= max_size",
        ));
    }
    let tol2 = config.tolerance * config.tolerance;
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        grid.entry(grid_cell(p, config.tolerance))
            .or_default()
            .push(i);
    }

    let mut visited = vec![false; cloud.len()];
    let mut clusters = Vec::new();
    let mut queue = Vec::new();
    for seed in 0..cloud.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.clear();
        queue.push(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(i);
            let p = &cloud.points[i];
            let [cx, cy, cz] = grid_cell(p, config.tolerance);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&[cx + dx, cy + dy, cz + dz]) else {
                            continue;
                        };
                        for &j in cell {
                            if !visited[j] && (cloud.points[j] - p).norm_squared() <= tol2 {
                                visited[j] = true;
                                queue.push(j);
                            }
                        }
                    }
                }
            }
        }
        if (config.min_size..=config.max_size).contains(&members.len()) {
            members.sort_unstable();
            let centroid = centroid(members.iter().map(|&i| &cloud.points[i]))
                .expect("clusters are non-empty");
            clusters.push(Cluster {
                point_indices: members,
                centroid,
            });
        }
    }
    clusters.sort_by(|a, b| {
        b.point_indices
            .len()
            .cmp(&a.point_indices.len())
            .then(a.point_indices[0].cmp(&b.point_indices[0]))
    });
    Ok(clusters)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBoxConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub negative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassThroughConfig {
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
}

/// Settings for the whole extraction chain. Defaults are tuned for the
/// synthetic scenes produced by [`crate::simulator::render_cylinder_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Removes the vehicle's own returns.
    pub crop_box: CropBoxConfig,
    pub pass_through: PassThroughConfig,
    pub leaf: f64,
    pub ransac: RansacConfig,
    pub cluster: ClusterConfig,
    /// Largest accepted jump of the landmark between frames, meters.
    pub max_jump: f64,
    /// Cylinder radius used to push the visible-arc centroid back to the
    /// axis by `2 r / pi` along the bearing. `None` disables the correction.
    pub landmark_radius: Option<f64>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            crop_box: CropBoxConfig {
                min: [-0.3, -0.3, -0.5],
                max: [0.3, 0.3, 1.0],
                negative: true,
            },
            pass_through: PassThroughConfig {
                axis: Axis::Z,
                lo: -0.5,
                hi: 2.0,
            },
            leaf: 0.02,
            ransac: RansacConfig::default(),
            cluster: ClusterConfig::default(),
            max_jump: 0.5,
            landmark_radius: Some(0.05),
        }
    }
}

/// Runs the full chain on one frame.
///
/// With `previous` set, the cluster nearest to it within `max_jump` is chosen;
/// otherwise the largest cluster. Returns `Ok(None)` when nothing survives.
pub fn extract_landmark(
    cloud: &PointCloud,
    timestamp: f64,
    config: &ExtractionConfig,
    previous: Option<[f64; 2]>,
) -> Result<Option<LandmarkObservation>, PointCloudError> {
    let cropped = crop_box(
        cloud,
        config.crop_box.min,
        config.crop_box.max,
        config.crop_box.negative,
    )?;
    let passed = pass_through(
        &cropped,
        config.pass_through.axis,
        config.pass_through.lo,
        config.pass_through.hi,
    )?;
    let down = voxel_downsample(&passed, config.leaf)?;
    let objects = segment_ground_ransac(&down, &config.ransac)?.rest;
    let clusters = euclidean_cluster(&objects, &config.cluster)?;

    let chosen = match previous {
        None => clusters.first(),
        Some(prev) => clusters
            .iter()
            .map(|c| ((c.centroid.x - prev[0]).hypot(c.centroid.y - prev[1]), c))
            .filter(|(d, _)| *d <= config.max_jump)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c)| c),
    };
    Ok(chosen.map(|c| {
        let mut position = [c.centroid.x, c.centroid.y];
        if let Some(radius) = config.landmark_radius {
            let range = position[0].hypot(position[1]);
            if range > 0.0 {
                let shift = 2.0 * radius / std::f64::consts::PI / range;
                position = position.map(|v| v * (1.0 + shift));
            }
        }
        LandmarkObservation {
            timestamp,
            position,
        }
    }))
}
