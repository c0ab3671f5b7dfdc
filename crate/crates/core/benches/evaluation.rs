//! Per-case evaluation, parallel vs sequential across cases.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use voxcycle::data::phantom::{generate_phantoms, LesionSpec, PhantomSpec};
use voxcycle::metrics::{evaluate_case, MetricConfig, Region};
use voxcycle::voxcore::parallel;

fn evaluation(c: &mut Criterion) {
    let spec = PhantomSpec {
        seed: 3,
        n_cases: 8,
        extents: [32, 32, 16],
        lesion: Some(LesionSpec::default()),
        ..PhantomSpec::default()
    };
    let cases = generate_phantoms(&spec).unwrap();
    let cfg = MetricConfig::default();
    let mut group = c.benchmark_group("evaluate_8_cases");
    group.sample_size(10);
    for (name, on) in [("parallel", true), ("sequential", false)] {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            parallel::set_enabled(on);
            b.iter(|| {
                let rows = parallel::map_indexed(cases.len(), |i| {
                    let k = &cases[i];
                    evaluate_case(&k.id, &k.t1, &k.fa, Some(&k.mask), &Region::ALL, &cfg).unwrap()
                });
                black_box(rows.len());
            });
        });
    }
    parallel::set_enabled(true);
    group.finish();
}

criterion_group!(benches, evaluation);
criterion_main!(benches);
