//! Sequential vs rayon execution of the data-parallel hot paths.
//! Build with `--no-default-features` to see the fallback on both arms.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use haft_core::data_io::{RunConfig, SelectionCriterion, TaskKind};
use haft_core::downstream::{evaluate, EvalProtocol, ForestParams, RandomForest};
use haft_core::exec::Exec;
use haft_core::feature_space::init_pool;
use haft_core::harness::synthetic_product;
use haft_core::measures::select_features;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn forest_fit(c: &mut Criterion) {
    let ds = synthetic_product(500, 10, 0).unwrap();
    let x: Vec<Vec<f64>> = (0..ds.n_rows())
        .map(|i| ds.columns().iter().map(|col| col[i]).collect())
        .collect();
    let params = ForestParams {
        n_trees: 50,
        max_depth: 8,
        min_samples_split: 2,
    };
    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| RandomForest::fit(black_box(&x), ds.target(), TaskKind::Regression, params, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn cv_evaluate(c: &mut Criterion) {
    let ds = synthetic_product(500, 10, 1).unwrap();
    let pool = init_pool(&ds, 64).unwrap();
    let mut g = c.benchmark_group("cv_evaluate");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = RunConfig {
            exec,
            ..RunConfig::default()
        };
        let proto = EvalProtocol::from_config(&cfg, ds.task());
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(black_box(&pool), 20, &proto).unwrap())
        });
    }
    g.finish();
}

fn mrmr(c: &mut Criterion) {
    let ds = synthetic_product(2000, 120, 2).unwrap();
    let pool = init_pool(&ds, 256).unwrap();
    let mut g = c.benchmark_group("mrmr_select");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| select_features(black_box(&pool), 20, SelectionCriterion::Mrmr, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forest_fit, cv_evaluate, mrmr);
criterion_main!(benches);
