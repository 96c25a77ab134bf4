#![allow(dead_code)]

use std::collections::BTreeMap;

use odocal::pointcloud::{Point, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_cloud(rng: &mut ChaCha8Rng, max_points: usize, extent: f64) -> PointCloud {
    let n = rng.random_range(0..=max_points);
    (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
            )
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exhaustive box containment.
pub fn crop_oracle(cloud: &PointCloud, min: [f64; 3], max: [f64; 3], negative: bool) -> Vec<Point> {
    let mut out = Vec::new();
    for p in &cloud.points {
        let mut inside = true;
        for i in 0..3 {
            if p[i] < min[i] || p[i] > max[i] {
                inside = false;
            }
        }
        if inside != negative {
            out.push(*p);
        }
    }
    out
}

pub fn pass_oracle(cloud: &PointCloud, axis: usize, lo: f64, hi: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for p in &cloud.points {
        if lo <= p[axis] && p[axis] <= hi {
            out.push(*p);
        }
    }
    out
}

/// Groups points by `floor(p / leaf)` and averages each group. Returned sorted
/// by cell key.
pub fn voxel_oracle(cloud: &PointCloud, leaf: f64) -> Vec<([i64; 3], Point)> {
    let mut groups: BTreeMap<[i64; 3], Vec<Point>> = BTreeMap::new();
    for p in &cloud.points {
        let key = [
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        ];
        groups.entry(key).or_default().push(*p);
    }
    groups
        .into_iter()
        .map(|(k, pts)| {
            let n = pts.len() as f64;
            let mut s = [0.0; 3];
            for p in &pts {
                s[0] += p.x;
                s[1] += p.y;
                s[2] += p.z;
            }
            (k, Point::new(s[0] / n, s[1] / n, s[2] / n))
        })
        .collect()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// All-pairs union-find. Components within the size window, each as sorted
/// member indices, the list sorted lexicographically.
pub fn cluster_oracle(cloud: &PointCloud, tol: f64, min: usize, max: usize) -> Vec<Vec<usize>> {
    let n = cloud.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if (cloud.points[i] - cloud.points[j]).norm_squared() <= tol * tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        comps.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = comps
        .into_values()
        .filter(|c| c.len() >= min && c.len() <= max)
        .collect();
    out.sort();
    out
}

pub fn same_points(a: &[Point], b: &[Point]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p == q)
}
