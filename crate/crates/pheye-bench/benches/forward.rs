use criterion::{black_box, criterion_group, criterion_main, Criterion};

use pheye_bench::{bench_image, bench_model};
use pheye_core::MulLedger;

fn bench_forward_paths(c: &mut Criterion) {
    let model = bench_model();
    let image = bench_image();
    let ledger = MulLedger::new();
    let vision = model.encoder.encode(&image, &ledger, None).expect("encode");
    let text = [1usize, 5, 9, 13, 2];

    c.bench_function("encode_five_sub_images", |b| {
        b.iter(|| {
            let ledger = MulLedger::new();
            model
                .encoder
                .encode(black_box(&image), &ledger, None)
                .unwrap()
        })
    });

    c.bench_function("conditioned_forward", |b| {
        b.iter(|| {
            let ledger = MulLedger::new();
            model
                .forward(black_box(&text), &vision, &ledger, None)
                .unwrap()
        })
    });

    c.bench_function("forward_and_backward", |b| {
        b.iter(|| {
            let ledger = MulLedger::new();
            let logits = model.forward(black_box(&text), &vision, &ledger, None).unwrap();
            let loss = logits
                .cross_entropy_sum(&[5, 9, 13, 2, 4], &[true; 5])
                .unwrap();
            loss.backward().unwrap();
            for (_, p) in model.trainable_parameters() {
                p.zero_grad();
            }
        })
    });

    c.bench_function("greedy_generate_4_tokens", |b| {
        b.iter(|| {
            let ledger = MulLedger::new();
            model.generate(black_box(&[1, 5]), &vision, 4, &ledger).unwrap()
        })
    });
}

criterion_group!(benches, bench_forward_paths);
criterion_main!(benches);
