use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use graspdict::data::synth_generate;
use graspdict::dictionary::{encode_training_poses, DictionaryModule};
use graspdict::estimator::GraphUNet;
use graspdict::geometry::{encode_pose, procrustes_align, Pose2D, Pose3D};
use graspdict::numerics::{kmeans, Matrix, Mode};
use graspdict::TrainConfig;

fn poses(n_seq: usize, frames: usize) -> (Vec<Pose2D>, Vec<Pose3D>) {
    synth_generate(n_seq, frames, 7).into_iter().filter_map(|r| r.pose3d.map(|y| (r.pose2d, y))).unzip()
}

fn geometry(c: &mut Criterion) {
    let (_, ys) = poses(4, 16);
    c.bench_function("cyl_encode x64", |b| {
        b.iter(|| ys.iter().map(|y| encode_pose(black_box(y)).unwrap()).collect::<Vec<_>>())
    });
    c.bench_function("procrustes_align x64", |b| {
        b.iter(|| {
            ys.iter().zip(ys.iter().rev()).map(|(a, r)| procrustes_align(black_box(a), r).unwrap()).collect::<Vec<_>>()
        })
    });
}

fn networks(c: &mut Criterion) {
    let (xs, ys) = poses(4, 16);
    let (h, _) = encode_training_poses(&ys).unwrap();
    let dict = DictionaryModule::new(h[0].len(), 30, &TrainConfig::default().encoder_widths, 0).unwrap();
    c.bench_function("dictionary encoder forward batch 64", |b| {
        b.iter(|| dict.encode(black_box(&h), Mode::Infer).unwrap())
    });

    let mut net = GraphUNet::new((64, 128), 0).unwrap();
    net.fit_normalization(xs.iter().zip(&ys)).unwrap();
    let refs: Vec<&Pose2D> = xs.iter().collect();
    c.bench_function("estimator forward batch 64", |b| b.iter(|| net.estimate_batch(black_box(&refs)).unwrap()));
}

fn clustering(c: &mut Criterion) {
    let (_, ys) = poses(10, 20);
    let (h, _) = encode_training_poses(&ys).unwrap();
    let rows: Vec<f64> = h.iter().flat_map(|v| v.values().to_vec()).collect();
    let m = Matrix::from_vec(h.len(), h[0].len(), rows).unwrap();
    c.bench_function("kmeans k=30 on 200 vectors", |b| b.iter(|| kmeans(black_box(&m), 30, 0).unwrap()));
}

criterion_group!(benches, geometry, networks, clustering);
criterion_main!(benches);
