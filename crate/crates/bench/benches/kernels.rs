use criterion::{criterion_group, criterion_main, Criterion};
use dtp_bench::{random_tensor, test_image};
use dtp_core::pipeline::{dtp_step, DtpState, PreparedPair};
use dtp_core::{DtpConfig, Graph};

fn conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d 3x3");
    for (ch, hw) in [(64, 64), (256, 16)] {
        let x = random_tensor(&[1, ch, hw, hw], 1);
        let w = random_tensor(&[ch, ch, 3, 3], 2);
        group.bench_function(format!("{ch}ch {hw}x{hw} forward+backward"), |b| {
            b.iter(|| {
                let mut g = Graph::<f32>::new();
                let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
                let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
                let loss = g.sum_all(y).unwrap();
                g.backward(loss).unwrap();
            })
        });
    }
    group.finish();
}

fn iteration(c: &mut Criterion) {
    let cfg = DtpConfig { size: 32, iters: 1, ..DtpConfig::default() };
    let pair = PreparedPair::<f32>::new(&test_image(32, 3), &test_image(32, 4), cfg.size).unwrap();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("one iteration at 32x32", |b| {
        b.iter_batched(
            || DtpState::<f32>::new(&cfg).unwrap(),
            |mut state| dtp_step(&mut state, &pair, &cfg, true).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, conv2d, iteration);
criterion_main!(benches);
