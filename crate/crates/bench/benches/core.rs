use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use geotarget_core::data::binarize_target;
use geotarget_core::models::fit;
use geotarget_core::stats::{moran_permutation_test, PermutationConfig};
use geotarget_core::synthetic::{gen_households, gen_regions, Layout, SyntheticSpec};
use geotarget_core::weights::{delaunay_neighbors, row_standardize};
use geotarget_core::{constrained_divisive_cluster, Dataset, Family, ModelSpec, RegionTable};
use nalgebra::DMatrix;
use std::hint::black_box;

fn layout(n: usize) -> Layout {
    Layout::Random {
        n,
        extent: 100.0,
        min_separation: 1.0,
    }
}

fn world(n: usize, hpr: usize) -> (RegionTable, Dataset) {
    let spec = SyntheticSpec::heterogeneous(layout(n), hpr, 0.5, 11);
    let regions = gen_regions(&spec).unwrap();
    let w = row_standardize(&delaunay_neighbors(&regions).unwrap()).unwrap();
    let (ds, _) = gen_households(&regions, &w, &spec).unwrap();
    (regions, ds)
}

fn delaunay(c: &mut Criterion) {
    let mut g = c.benchmark_group("delaunay");
    for n in [100, 400, 1600] {
        let spec = SyntheticSpec::heterogeneous(layout(n), 1, 0.5, 3);
        let regions = gen_regions(&spec).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &regions, |b, r| {
            b.iter(|| delaunay_neighbors(black_box(r)).unwrap())
        });
    }
    g.finish();
}

fn moran(c: &mut Criterion) {
    let (regions, ds) = world(200, 1);
    let w = row_standardize(&delaunay_neighbors(&regions).unwrap()).unwrap();
    let y: Vec<f64> = ds.pce.iter().map(|p| p.ln()).collect();
    let mut g = c.benchmark_group("moran_999");
    for parallel in [false, true] {
        let cfg = PermutationConfig {
            parallel,
            ..PermutationConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(parallel), &cfg, |b, cfg| {
            b.iter(|| moran_permutation_test(black_box(&y), &w, cfg).unwrap())
        });
    }
    g.finish();
}

fn clustering(c: &mut Criterion) {
    let (regions, ds) = world(200, 1);
    let w = delaunay_neighbors(&regions).unwrap();
    let y: Vec<f64> = ds.pce.iter().map(|p| p.ln()).collect();
    let x = DMatrix::from_column_slice(y.len(), 1, &y);
    c.bench_function("divisive_cluster_200_k12", |b| {
        b.iter(|| constrained_divisive_cluster(black_box(&x), &w, 12).unwrap())
    });
}

fn models(c: &mut Criterion) {
    let (_, ds) = world(50, 40);
    let labels = binarize_target(&ds, 0.4, &ds).unwrap();
    let names = ds.numeric_feature_names();
    let x = ds.feature_matrix(&names).unwrap();
    let y: Vec<f64> = ds.pce.iter().map(|p| p.ln()).collect();
    let mut g = c.benchmark_group("fit_2000");
    g.sample_size(10);
    for family in Family::ALL {
        let spec = ModelSpec::new(family, 1);
        g.bench_function(family.as_str(), |b| {
            b.iter(|| fit(&spec, black_box(&x), &y, &labels).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, delaunay, moran, clustering, models);
criterion_main!(benches);
