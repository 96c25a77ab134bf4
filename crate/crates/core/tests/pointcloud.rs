mod common;

use odocal::pointcloud::{
    crop_box, euclidean_cluster, extract_landmark, pass_through, segment_ground_ransac,
    voxel_downsample, Axis, ClusterConfig, Point, PointCloud, RansacConfig,
};
use odocal::simulator::{render_cylinder_cloud, Cylinder, LidarSpec};
use odocal::{ExtractionConfig, Pose2D};
use proptest::prelude::*;

fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 0..max)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crop_matches_containment(cloud in arb_cloud(300), a in prop::array::uniform3(-1.0..1.0f64),
                                b in prop::array::uniform3(-1.0..1.0f64), negative: bool) {
        let lo = [0, 1, 2].map(|i| a[i].min(b[i]));
        let hi = [0, 1, 2].map(|i| a[i].max(b[i]));
        let got = crop_box(&cloud, lo, hi, negative).unwrap();
        prop_assert!(common::same_points(&got.points, &common::crop_oracle(&cloud, lo, hi, negative)));
    }

    #[test]
    fn crop_and_its_negation_partition(cloud in arb_cloud(300), lo in -1.0..0.0f64, hi in 0.0..1.0f64) {
        let inside = crop_box(&cloud, [lo; 3], [hi; 3], false).unwrap();
        let outside = crop_box(&cloud, [lo; 3], [hi; 3], true).unwrap();
        prop_assert_eq!(inside.len() + outside.len(), cloud.len());
    }

    #[test]
    fn pass_through_matches_filter(cloud in arb_cloud(300), axis in 0usize..3, a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let (lo, hi) = (a.min(b), a.max(b));
        let got = pass_through(&cloud, [Axis::X, Axis::Y, Axis::Z][axis], lo, hi).unwrap();
        prop_assert!(common::same_points(&got.points, &common::pass_oracle(&cloud, axis, lo, hi)));
    }

    #[test]
    fn voxel_has_one_point_per_cell(cloud in arb_cloud(300), leaf in 0.02..0.8f64) {
        let got = voxel_downsample(&cloud, leaf).unwrap();
        let want = common::voxel_oracle(&cloud, leaf);
        prop_assert_eq!(got.len(), want.len());
        prop_assert!(got.len() <= cloud.len());
    }

    #[test]
    fn clusters_match_union_find(cloud in arb_cloud(250), tol in 0.05..0.4f64, min in 1usize..4) {
        let clusters = euclidean_cluster(&cloud, &ClusterConfig { tolerance: tol, min_size: min, max_size: 10_000 }).unwrap();
        let mut got: Vec<Vec<usize>> = clusters.iter().map(|c| c.point_indices.clone()).collect();
        got.sort();
        prop_assert_eq!(got, common::cluster_oracle(&cloud, tol, min, 10_000));
    }

    #[test]
    fn ransac_partitions_input(cloud in arb_cloud(200), seed: u64) {
        let cfg = RansacConfig { seed, ..RansacConfig::default() };
        let seg = segment_ground_ransac(&cloud, &cfg).unwrap();
        prop_assert_eq!(seg.ground.len() + seg.rest.len(), cloud.len());
        if let Some(plane) = seg.plane {
            prop_assert!((plane.normal.norm() - 1.0).abs() < 1e-12);
            for p in &seg.ground.points {
                prop_assert!(plane.signed_distance(p).abs() <= cfg.dist_tol);
            }
        }
    }
}

#[test]
fn ransac_recovers_tilted_ground_within_tolerance() {
    let mut rng = common::rng(3);
    let slope: f64 = 0.05;
    let mut pts = Vec::new();
    use rand::Rng;
    for _ in 0..500 {
        let x: f64 = rng.random_range(-3.0..3.0);
        let y: f64 = rng.random_range(-3.0..3.0);
        pts.push(Point::new(x, y, slope * x));
    }
    for _ in 0..50 {
        pts.push(Point::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.5..1.5),
        ));
    }
    let seg = segment_ground_ransac(&PointCloud::new(pts), &RansacConfig::default()).unwrap();
    assert_eq!(seg.ground.len(), 500);
    assert_eq!(seg.rest.len(), 50);
}

#[test]
fn extraction_tracks_the_landmark_across_a_pass() {
    let cyl = Cylinder {
        radius: 0.05,
        height: 0.4,
    };
    let lidar = LidarSpec::default();
    let cfg = ExtractionConfig::default();
    let world = [3.0, 1.0];
    let mut previous = None;
    for k in 0..20 {
        let pose = Pose2D::new(0.1 * k as f64, 0.0, 0.0);
        let cloud = render_cylinder_cloud(&pose, world, &cyl, &lidar, 8.0, k);
        let obs = extract_landmark(&cloud, k as f64, &cfg, previous)
            .unwrap()
            .expect("landmark visible");
        let truth = pose.world_to_body(world);
        assert!((obs.position[0] - truth[0]).hypot(obs.position[1] - truth[1]) < 0.03);
        previous = Some(obs.position);
    }
}

#[test]
fn bias_correction_moves_centroid_outward() {
    let cyl = Cylinder {
        radius: 0.05,
        height: 0.4,
    };
    let lidar = LidarSpec {
        range_std: 0.0,
        ..LidarSpec::default()
    };
    let cloud = render_cylinder_cloud(&Pose2D::default(), [2.0, 0.0], &cyl, &lidar, 8.0, 0);
    let raw = ExtractionConfig {
        landmark_radius: None,
        ..ExtractionConfig::default()
    };
    let a = extract_landmark(&cloud, 0.0, &raw, None).unwrap().unwrap();
    let b = extract_landmark(&cloud, 0.0, &ExtractionConfig::default(), None)
        .unwrap()
        .unwrap();
    assert!(a.position[0] < 2.0 - 0.02);
    assert!((b.position[0] - 2.0).abs() < 0.01);
}

#[test]
fn ransac_inliers_match_the_true_plane() {
    use nalgebra::Vector3;
    use odocal::pointcloud::Plane;
    let cloud = render_cylinder_cloud(
        &Pose2D::default(),
        [3.0, 1.0],
        &Cylinder {
            radius: 0.05,
            height: 0.4,
        },
        &LidarSpec {
            layers: 32,
            angular_res: 1.2f64.to_radians(),
            ..LidarSpec::default()
        },
        5.0,
        4,
    );
    assert!(cloud.len() > 4000 && cloud.len() < 6000, "{}", cloud.len());
    let cfg = RansacConfig::default();
    let truth = Plane {
        normal: Vector3::z(),
        offset: 0.0,
    };
    let expected = cloud
        .points
        .iter()
        .filter(|p| truth.signed_distance(p).abs() <= cfg.dist_tol)
        .count();
    let got = segment_ground_ransac(&cloud, &cfg).unwrap().ground.len();
    assert!(
        (got as f64 - expected as f64).abs() <= 0.01 * expected as f64,
        "{got} {expected}"
    );
}

#[test]
fn cylinder_at_three_one_is_recovered() {
    let cyl = Cylinder {
        radius: 0.05,
        height: 0.4,
    };
    let cfg = ExtractionConfig::default();
    let clean = LidarSpec {
        range_std: 0.0,
        ..LidarSpec::default()
    };
    let cloud = render_cylinder_cloud(&Pose2D::default(), [3.0, 1.0], &cyl, &clean, 8.0, 0);
    let obs = extract_landmark(&cloud, 0.0, &cfg, None).unwrap().unwrap();
    let err = (obs.position[0] - 3.0).hypot(obs.position[1] - 1.0);
    assert!(err < cfg.leaf / 2.0, "{err}");

    for seed in 0..100 {
        let cloud = render_cylinder_cloud(
            &Pose2D::default(),
            [3.0, 1.0],
            &cyl,
            &LidarSpec::default(),
            8.0,
            seed,
        );
        let obs = extract_landmark(&cloud, 0.0, &cfg, None).unwrap().unwrap();
        let err = (obs.position[0] - 3.0).hypot(obs.position[1] - 1.0);
        assert!(err < 0.03, "seed {seed}: {err}");
    }
}
