use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use orca_bench::desk_traces;
use orca_core::agent::Policy;
use orca_core::bench::{case_id, compute_bws, write_report, AnnotationRecord, ReportOptions};

fn annotations(traces: &[orca_core::agent::EpisodeTrace], annotators: usize) -> Vec<AnnotationRecord> {
    let mut cases: Vec<String> = traces.iter().map(|t| case_id(&t.header.task_id, t.header.seed)).collect();
    cases.dedup();
    let mut out = Vec::new();
    for a in 0..annotators {
        for (i, c) in cases.iter().enumerate() {
            let best = Policy::ALL[(a + i) % 4];
            out.push(AnnotationRecord {
                annotator_id: format!("ann{a}"),
                case_id: c.clone(),
                pps: Policy::ALL.iter().map(|&p| (p, 1 + ((a + i) % 5) as u8)).collect(),
                checkmarks: Default::default(),
                best,
                worst: Policy::ALL[(a + i + 1) % 4],
                timestamp: 0,
            });
        }
    }
    out
}

fn report(c: &mut Criterion) {
    let traces = desk_traces(5, 0.3);
    let records = annotations(&traces, 8);
    c.bench_function("report/desk_5_seeds_8_annotators", |b| {
        b.iter(|| black_box(write_report(&traces, &records, ReportOptions::default()).unwrap()))
    });
    c.bench_function("report/render_table", |b| {
        let r = write_report(&traces, &records, ReportOptions::default()).unwrap();
        b.iter(|| black_box(r.render_table()))
    });
    c.bench_function("bws/400_records", |b| b.iter(|| black_box(compute_bws(&records).unwrap())));
}

criterion_group!(benches, report);
criterion_main!(benches);
