use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use coopal_core::classifiers::train;
use coopal_core::dataset::synthesize;
use coopal_core::integration::{integrate_mv, integrate_wa, integrate_wmv};
use coopal_core::selection::select_class;
use coopal_core::simulator::{prepare, ExperimentConfig};
use coopal_core::{
    ClassifierKind, Contribution, IntegrationMethod, Label, Mode, SelectionPolicy, Timestamp,
    VehicleId, WaWeights, WmvVariant,
};

fn contributions() -> Vec<Contribution> {
    (0..5)
        .map(|j| Contribution {
            labeler: VehicleId(j),
            label: Label((j % 3) as usize),
            time: Timestamp::new(10.0 - 0.3 * j as f64).unwrap(),
            accuracy: 0.6 + 0.07 * j as f64,
        })
        .collect()
}

fn integration(c: &mut Criterion) {
    let contribs = contributions();
    let t = Timestamp::new(10.0).unwrap();
    let mut g = c.benchmark_group("integration");
    g.bench_function("mv", |b| {
        b.iter(|| integrate_mv(black_box(&contribs)).unwrap())
    });
    g.bench_function("wmv", |b| {
        b.iter(|| integrate_wmv(black_box(&contribs), t, 1.0, WmvVariant::PaperLiteral).unwrap())
    });
    g.bench_function("wa", |b| {
        b.iter(|| integrate_wa(black_box(&contribs), t, 1.0, WaWeights::default()).unwrap())
    });
    g.finish();
}

fn selection(c: &mut Criterion) {
    let current: Vec<Label> = (0..200).map(|i| Label(i % 7 % 4)).collect();
    let available: BTreeSet<Label> = (0..4).map(Label).collect();
    c.bench_function("select_class/200", |b| {
        b.iter(|| select_class(black_box(&current), &available, 4).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let ds = synthesize(4, 18, 50, 2.0, 1).unwrap();
    let data = ds.subset(&(0..ds.len()).collect::<Vec<_>>());
    let mut g = c.benchmark_group("train/200x18");
    for kind in ClassifierKind::default_profiles() {
        g.bench_function(kind.name(), |b| {
            b.iter(|| train(&kind, black_box(&data), 3).unwrap())
        });
    }
    g.finish();
}

fn experiment(c: &mut Criterion) {
    let ds = synthesize(4, 18, 50, 1.25, 2).unwrap();
    let cfg = ExperimentConfig {
        offline_size: 20,
        alpha: 1.0,
        max_steps: Some(20),
        ..Default::default()
    };
    let mut g = c.benchmark_group("experiment");
    g.sample_size(10);
    g.bench_function("prepare", |b| b.iter(|| prepare(&cfg, &ds, 5).unwrap()));
    g.bench_function("run/samples_wa_qds/20_steps", |b| {
        b.iter_batched(
            || prepare(&cfg, &ds, 5).unwrap(),
            |run| {
                run.run(Mode::Samples, IntegrationMethod::Wa, SelectionPolicy::Qds)
                    .unwrap()
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, integration, selection, training, experiment);
criterion_main!(benches);
