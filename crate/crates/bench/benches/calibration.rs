use criterion::{criterion_group, criterion_main, Criterion};
use odocal::pointcloud::extract_landmark;
use odocal::scenarios;
use odocal::simulator::{render_cylinder_cloud, Cylinder, LidarSpec};
use odocal::{
    calibrate, multi_restart, simulate, ExtractionConfig, NoiseSpec, OptimizerConfig, Parameter,
    Pose2D, RestartConfig, SplitConfig, StageBounds,
};
use std::hint::black_box;

fn bench_calibrate(c: &mut Criterion) {
    let mut group = c.benchmark_group("calibrate");
    for (name, data, truth) in [
        (
            "robot",
            simulate(&scenarios::robot(NoiseSpec::default(), 1))
                .unwrap()
                .dataset,
            scenarios::robot_params(),
        ),
        (
            "car",
            simulate(&scenarios::car(NoiseSpec::default(), 1))
                .unwrap()
                .dataset,
            scenarios::car_params(),
        ),
    ] {
        let init = truth
            .with(Parameter::WheelRadius, 1.2 * truth.wheel_radius())
            .with(Parameter::Geometry, 0.8 * truth.geometry());
        let bounds = StageBounds::around(&truth, 0.25, 4.0);
        group.bench_function(name, |b| {
            b.iter(|| {
                calibrate(
                    black_box(&data),
                    &init,
                    &SplitConfig::default(),
                    &OptimizerConfig::default(),
                    &bounds,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_multi_restart(c: &mut Criterion) {
    let data = simulate(&scenarios::robot(NoiseSpec::default(), 1))
        .unwrap()
        .dataset;
    let truth = scenarios::robot_params();
    c.bench_function("multi_restart/robot_100", |b| {
        b.iter(|| {
            multi_restart(
                black_box(&data),
                &truth,
                &SplitConfig::default(),
                &OptimizerConfig::default(),
                &RestartConfig::default(),
                Some(&truth),
            )
            .unwrap()
        })
    });
}

fn bench_extraction(c: &mut Criterion) {
    let cloud = render_cylinder_cloud(
        &Pose2D::default(),
        [3.0, 1.0],
        &Cylinder {
            radius: 0.05,
            height: 0.4,
        },
        &LidarSpec::default(),
        8.0,
        0,
    );
    let cfg = ExtractionConfig::default();
    c.bench_function("extract_landmark/64_layers", |b| {
        b.iter(|| extract_landmark(black_box(&cloud), 0.0, &cfg, None).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_calibrate, bench_multi_restart, bench_extraction
}
criterion_main!(benches);
