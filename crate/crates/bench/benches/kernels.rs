use std::hint::black_box;

use bevkit::boxes::{bev_iou, rotated_nms, Box3D, NmsConfig};
use bevkit::scene::{generate_scene_with, SceneConfig};
use bevkit::voxel::{spatial_to_channel, unproject, UnprojectOptions, VoxelGrid, VoxelGridSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_unproject(c: &mut Criterion) {
    let cfg = SceneConfig {
        image_size: (800, 450),
        ..SceneConfig::default()
    };
    let scene = generate_scene_with(3, &cfg).unwrap();
    let mut group = c.benchmark_group("unproject");
    group.sample_size(10);
    for nz in [1usize, 4] {
        let grid = VoxelGridSpec { nz, ..scene.grid };
        group.bench_with_input(BenchmarkId::new("desk_80x80", nz), &grid, |b, grid| {
            b.iter(|| unproject(&scene.rig, &scene.feature_images, grid, UnprojectOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn ring_boxes(n: usize) -> Vec<Box3D> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.37;
            Box3D::new(10.0 * t.cos(), 10.0 * t.sin(), 0.0, 1.8, 4.5, 1.6, t)
                .with_class((i % 3) as u32)
                .with_score(((i * 7919) % 1000) as f64 / 1000.0)
        })
        .collect()
}

fn bench_iou(c: &mut Criterion) {
    let a = Box3D::new(0.0, 0.0, 0.0, 1.9, 4.6, 1.7, 0.3);
    let b = Box3D::new(0.8, 0.4, 0.0, 1.8, 4.2, 1.6, -0.5);
    c.bench_function("bev_iou/overlapping", |bench| bench.iter(|| bev_iou(black_box(&a), black_box(&b))));
}

fn bench_nms(c: &mut Criterion) {
    let mut group = c.benchmark_group("rotated_nms");
    for n in [100usize, 1000] {
        let boxes = ring_boxes(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &boxes, |b, boxes| {
            b.iter(|| rotated_nms(boxes, &NmsConfig::default()))
        });
    }
    group.finish();
}

fn bench_s2c(c: &mut Criterion) {
    let spec = VoxelGridSpec {
        nx: 200,
        ny: 200,
        ..VoxelGridSpec::default()
    };
    let grid = VoxelGrid::zeros(spec, 16);
    c.bench_function("spatial_to_channel/200x200x12x16", |b| b.iter(|| spatial_to_channel(black_box(&grid))));
}

criterion_group!(benches, bench_unproject, bench_iou, bench_nms, bench_s2c);
criterion_main!(benches);
