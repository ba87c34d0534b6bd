//! Rayon global pool against a single-thread pool on the data-parallel hot
//! paths. Run with `cargo bench -p pdl-scopf`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pdl_scopf::dataset::Dataset;
use pdl_scopf::oracle;
use pdl_scopf::train::{self, Method, Trainer, TrainerConfig};
use pdl_scopf::{sampler, Instance, Network, PerturbationConfig};
use rayon::ThreadPool;

fn bus5() -> Network {
    Network::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/cases/bus5.json")).unwrap()
}

fn instances(net: &Network, n: usize) -> Vec<Instance> {
    sampler::generate(net, &PerturbationConfig::default(), n).unwrap().instances
}

/// `(label, pool)`; `None` runs on the global pool.
fn pools() -> Vec<(String, Option<ThreadPool>)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![
        ("sequential".into(), Some(single)),
        (format!("rayon-{}", rayon::current_num_threads()), None),
    ]
}

fn on<R: Send>(pool: &Option<ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn primal_steps(c: &mut Criterion) {
    let net = bus5();
    let insts = instances(&net, 256);
    let mut group = c.benchmark_group("primal_step");
    for batch in [8, 64] {
        let cfg = TrainerConfig {
            batch,
            ..Default::default()
        };
        for (name, pool) in pools() {
            let mut trainer = Trainer::new(&net, &insts, None, Method::Pdl, cfg.clone()).unwrap();
            group.bench_with_input(BenchmarkId::new(name, batch), &batch, |b, _| {
                b.iter(|| on(&pool, || black_box(trainer.primal_step(1).unwrap())))
            });
        }
    }
    group.finish();
}

fn evaluate_set(c: &mut Criterion) {
    let net = bus5();
    let insts = instances(&net, 500);
    let trainer = Trainer::new(&net, &insts, None, Method::Pdl, TrainerConfig::default()).unwrap();
    let mut group = c.benchmark_group("evaluate_set");
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| on(&pool, || black_box(train::evaluate_set(&net, &trainer.primal, &insts, 25).unwrap())))
        });
    }
    group.finish();
}

fn oracle_labels(c: &mut Criterion) {
    let net = bus5();
    let ds = Dataset::generate(&net, &PerturbationConfig::default(), 4).unwrap();
    let mut group = c.benchmark_group("oracle_label_4");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut d = ds.clone();
                on(&pool, || black_box(oracle::label_dataset(&mut d, &net, 1e-2).unwrap()))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, primal_steps, evaluate_set, oracle_labels);
criterion_main!(benches);
