use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ccd_bench::busy_frame;
use ccd_core::geometry::radius_profile;
use ccd_core::scoring::{score_iris_prolapse, score_pcr, score_vitreous, ScoringConfig};

fn scorers(c: &mut Criterion) {
    let (frame, pupil, iris) = busy_frame();
    let cfg = ScoringConfig::default();
    c.bench_function("iris_prolapse_960x540", |b| {
        b.iter(|| score_iris_prolapse(0, black_box(&frame), black_box(&iris), &cfg.iris))
    });
    c.bench_function("pcr_960x540", |b| {
        b.iter(|| score_pcr(0, Some(black_box(&frame)), black_box(&pupil), &cfg.pcr).unwrap())
    });
    c.bench_function("vitreous_960x540", |b| {
        b.iter(|| score_vitreous(0, black_box(&pupil), &cfg.vitreous))
    });
    c.bench_function("radius_profile_12", |b| {
        b.iter(|| radius_profile(black_box(&pupil), 12).unwrap())
    });
}

criterion_group!(benches, scorers);
criterion_main!(benches);
