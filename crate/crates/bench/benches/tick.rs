use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use torqueloop_bench::TickFixture;
use torqueloop_core::scenario::Condition;

fn controller_tick(c: &mut Criterion) {
    let mut group = c.benchmark_group("tick");
    for condition in Condition::ALL {
        let mut fx = TickFixture::new(condition).expect("fixture");
        group.bench_function(BenchmarkId::new("publish+compute", condition.label()), |b| {
            b.iter(|| {
                fx.publish();
                fx.tick();
                black_box(fx.command(0))
            })
        });
    }
    let mut fx = TickFixture::new(Condition::NoFeatures).expect("fixture");
    group.bench_function("publish only", |b| b.iter(|| fx.publish()));
    group.finish();
}

criterion_group!(benches, controller_tick);
criterion_main!(benches);
