use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lumina_core::attribution::integrated_gradients;
use lumina_core::model::{HyperParams, Lumina, Variant};
use lumina_core::synth::{generate, SynthConfig};

fn subject(n: usize) -> lumina_core::dataset::PreparedSubject {
    generate(&SynthConfig {
        n_subjects: 2,
        n_rois: n,
        n_timepoints: 4 * n,
        seed: 1,
        ..Default::default()
    })
    .unwrap()[0]
        .prepare()
        .unwrap()
}

fn loss_and_grads(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grads");
    for n in [16, 64, 111] {
        let s = subject(n);
        for v in [Variant::Full, Variant::NoNeuroGraph] {
            let model = Lumina::init(HyperParams::default(), v.switches(), n, 0).unwrap();
            group.bench_with_input(BenchmarkId::new(v.key(), n), &s, |b, s| {
                b.iter(|| {
                    model
                        .loss_and_grads(model.params.values(), s.r.as_matrix(), &s.quad, s.label as usize)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn attribution(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrated_gradients");
    group.sample_size(10);
    let n = 32;
    let s = subject(n);
    let model = Lumina::init(HyperParams::default(), Variant::Full.switches(), n, 0).unwrap();
    for steps in [16, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(steps), &steps, |b, &steps| {
            b.iter(|| integrated_gradients(&model, s.r.as_matrix(), 1, steps).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loss_and_grads, attribution);
criterion_main!(benches);
