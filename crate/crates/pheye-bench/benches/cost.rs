use criterion::{black_box, criterion_group, criterion_main, Criterion};

use pheye_core::cost::{
    cost_report, efficiency_ratio, llava_lm_cost, pheye_lm_cost, pheye_vit_cost, vit_cost,
    CostInputs, Rational,
};

fn published_inputs() -> CostInputs {
    CostInputs {
        full_res_tokens: 2305,
        tokens_per_sub_image: 257,
        sub_images: 10,
        text_tokens: 65,
        vision_tokens: 2305,
        lm_dim: 2048,
        vit_dim: 1280,
        interval: 2,
    }
}

fn bench_calculators(c: &mut Criterion) {
    c.bench_function("vit_cost_published_scale", |b| {
        b.iter(|| vit_cost(black_box(2305), black_box(1280)))
    });
    c.bench_function("pheye_vit_cost_published_scale", |b| {
        b.iter(|| pheye_vit_cost(black_box(257), black_box(1280), black_box(10)))
    });
    c.bench_function("lm_efficiency_ratio", |b| {
        b.iter(|| {
            let baseline = llava_lm_cost(black_box(65), black_box(2305), black_box(2048));
            let method =
                pheye_lm_cost(black_box(65), black_box(2305), black_box(2048), 1280, 2).unwrap();
            efficiency_ratio(baseline, &method).unwrap().to_decimal_string(2)
        })
    });
    c.bench_function("ratio_decimal_rendering", |b| {
        let ratio = Rational::new(130_789_416_960, 10_839_198_720).unwrap();
        b.iter(|| black_box(&ratio).to_decimal_string(4))
    });
    c.bench_function("full_cost_report", |b| {
        let inputs = published_inputs();
        b.iter(|| cost_report(black_box(&inputs)).unwrap())
    });
}

criterion_group!(benches, bench_calculators);
criterion_main!(benches);
