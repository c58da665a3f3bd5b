use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use miscause::causal_test::t_cdf;
use miscause::classifier::{
    forward, init_model, input_gradient, ClassificationRecord, ScoreVector,
};
use miscause::dataset::{NormalizedImage, IMAGE_LEN};
use miscause::stats::tally;

fn image() -> NormalizedImage {
    let values = (0..IMAGE_LEN)
        .map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0)
        .collect();
    NormalizedImage::from_values(values).unwrap()
}

fn bench_model(c: &mut Criterion) {
    let params = init_model(1, 10).unwrap();
    let img = image();
    c.bench_function("forward", |b| {
        b.iter(|| forward(&params, black_box(&img)).unwrap())
    });
    c.bench_function("input_gradient", |b| {
        b.iter(|| input_gradient(&params, black_box(&img), 3).unwrap())
    });
}

fn bench_tally(c: &mut Criterion) {
    let scores = ScoreVector::new(vec![0.1; 10]).unwrap();
    let records: Vec<_> = (0..10_000)
        .map(|i| ClassificationRecord {
            image_id: i.to_string(),
            true_label: i % 10,
            predicted_label: (i * 7) % 10,
            scores: scores.clone(),
            model_id: "m".into(),
        })
        .collect();
    c.bench_function("tally_10k", |b| {
        b.iter(|| tally(black_box(&records), 10).unwrap())
    });
}

fn bench_t_cdf(c: &mut Criterion) {
    c.bench_function("t_cdf", |b| {
        b.iter(|| t_cdf(black_box(2.3), black_box(17)).unwrap())
    });
}

criterion_group!(benches, bench_model, bench_tally, bench_t_cdf);
criterion_main!(benches);
