use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use quantum_bench::{cloned_components, load};
use quantum_core::ctmc::{build_ctmc, collect_counterexample, transient_until, DEFAULT_STATE_CAP};
use quantum_core::fixtures::{self, AIRBAG_HAZARD};
use quantum_core::{build_global, csl, prepare, prism, AnalysisOptions, SearchConfig};

fn translation(c: &mut Criterion) {
    let mut g = c.benchmark_group("translate");
    for n in [1, 10, 50] {
        let src = cloned_components(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &src, |b, src| {
            b.iter(|| {
                let global = build_global(&load(src)).unwrap();
                let sm = prism::emit_model(&global).unwrap().render();
                let props = csl::render(&csl::generate(&global).unwrap());
                black_box((sm, props))
            })
        });
    }
    g.finish();
}

fn airbag(c: &mut Criterion) {
    let model = fixtures::airbag();
    let global = build_global(&model).unwrap();
    c.bench_function("airbag/state_space", |b| {
        b.iter(|| black_box(build_ctmc(&global, DEFAULT_STATE_CAP).unwrap()))
    });

    let options = AnalysisOptions {
        search: SearchConfig {
            mass_fraction: 1.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let p = prepare(&model, AIRBAG_HAZARD, &options).unwrap();
    let mut g = c.benchmark_group("airbag/transient");
    for t in [10.0, 1000.0] {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| black_box(transient_until(&p.ctmc, &p.target, t, &options.transient).unwrap()))
        });
    }
    g.finish();

    let prob = p.probability(10.0).unwrap();
    c.bench_function("airbag/counterexample", |b| {
        b.iter(|| {
            black_box(collect_counterexample(&p.ctmc, &p.target, 10.0, prob, &options.search).unwrap())
        })
    });
    c.bench_function("airbag/full_run", |b| b.iter(|| black_box(p.run(10.0).unwrap())));
}

criterion_group!(benches, translation, airbag);
criterion_main!(benches);
