//! Sequential against rayon-parallel execution on the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ttl_itd::conformal::knn_batch;
use ttl_itd::harness::{
    load_episodes, max_k, sweep, train_pipeline, transitions, Evaluator, RunConfig, SweepConfig,
};
use ttl_itd::ope::paired_bootstrap;
use ttl_itd::qensemble::{fit_ensemble, EnsembleConfig};
use ttl_itd::table::ActionTable;
use ttl_itd::trajectory::SyntheticConfig;
use ttl_itd::Exec;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn config() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.synthetic = SyntheticConfig {
        n_members: 400,
        ..SyntheticConfig::default()
    };
    c.model.ensemble_members = 4;
    c.model.bootstrap_resamples = 200;
    c.model.permutations = 200;
    c.sweep = SweepConfig {
        k: vec![100, 200],
        beta: vec![0.3, 0.9],
        lambda: vec![0.5, 1.0],
        ..SweepConfig::default()
    };
    c
}

fn benches(c: &mut Criterion) {
    let config = config();
    let episodes = load_episodes(&config).unwrap();
    let out = train_pipeline(&episodes, &config, Exec::Parallel).unwrap();
    let artifact = &out.artifact;
    let test = transitions(artifact, &out.test_episodes);

    let mut g = c.benchmark_group("knn_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| knn_batch(&artifact.calibration, &test.features, 200, exec).unwrap())
        });
    }
    g.finish();

    let policy = ActionTable::constant(test.len(), &[1.0 / 9.0; 9]);
    let ens = EnsembleConfig {
        members: 8,
        ..EnsembleConfig::default()
    };
    let mut g = c.benchmark_group("ensemble_fit");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_ensemble(&test, &policy, &ens, exec).unwrap())
        });
    }
    g.finish();

    let a: Vec<f64> = (0..500).map(|i| -((i % 13) as f64) / 10.0).collect();
    let b_: Vec<f64> = (0..500).map(|i| -((i % 7) as f64) / 10.0).collect();
    let mut g = c.benchmark_group("paired_bootstrap");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| paired_bootstrap(&a, &b_, 2000, 1, exec).unwrap())
        });
    }
    g.finish();

    let ev = Evaluator::new(artifact, test.clone(), max_k(&config), Exec::Parallel).unwrap();
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep(&ev, &config.sweep, &config.dials, &config.model, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
