use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ccd_bench::synthetic_trace;
use ccd_core::model::ComplicationKind;
use ccd_core::segments::{flag_segments, merge_segments, select_top_k, window_scores, RiskTrace};

fn segment_ops(c: &mut Criterion) {
    let trace = RiskTrace::from_values(ComplicationKind::VitreousLoss, 0, &synthetic_trace(20_000)).unwrap();
    c.bench_function("window_scores_20k", |b| b.iter(|| window_scores(black_box(&trace), 10)));
    c.bench_function("flag_merge_topk_20k", |b| {
        b.iter(|| {
            let flagged = flag_segments(black_box(&trace), 10, 1.12);
            select_top_k(&merge_segments(flagged, 10), 5)
        })
    });
}

criterion_group!(benches, segment_ops);
criterion_main!(benches);
