//! Insert-path cost: per-level overhead and block-kind comparison.
//!
//! The update at each level is constant-time, so insertion cost should
//! grow linearly with the number of levels; the residual connection cuts
//! the constant on skewed traffic by stopping locked flows early.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use residual_sketch::config::{LevelConfig, SketchConfig};
use residual_sketch::hierarchy::GranularityKind;
use residual_sketch::trace::{gen_zipf, PacketRecord, ZipfSpec};
use residual_sketch::BlockKind;

fn trace() -> Vec<PacketRecord> {
    gen_zipf(&ZipfSpec {
        skew: 1.1,
        keys: 50_000,
        length: 200_000,
        seed: 42,
    })
    .unwrap()
}

fn config(levels: &[u8], kind: BlockKind, connection: bool) -> SketchConfig {
    SketchConfig {
        granularity: GranularityKind::Bit,
        width_bits: 32,
        memory_kb: 256.0,
        levels: levels
            .iter()
            .map(|&prefix_len| LevelConfig {
                prefix_len,
                theta_abs: None,
            })
            .collect(),
        kind,
        g: match kind {
            BlockKind::Uss => 1,
            BlockKind::Coco => 2,
        },
        beta: 0.8,
        expected_window: 200_000,
        seed: 1,
        connection,
    }
}

fn bench_levels(c: &mut Criterion) {
    let records = trace();
    let mut group = c.benchmark_group("insert_by_level_count");
    group.throughput(Throughput::Elements(records.len() as u64));
    group.sample_size(10);
    for levels in [&[32u8][..], &[32, 12], &[32, 24, 12], &[32, 24, 16, 12]] {
        group.bench_with_input(
            BenchmarkId::from_parameter(levels.len()),
            levels,
            |b, levels| {
                b.iter(|| {
                    let mut sketch = config(levels, BlockKind::Coco, true).build(0.001).unwrap();
                    for rec in &records {
                        sketch.insert_ip(rec.src_ip, 1).unwrap();
                    }
                    sketch.n()
                })
            },
        );
    }
    group.finish();
}

fn bench_block_kinds(c: &mut Criterion) {
    let records = trace();
    let mut group = c.benchmark_group("insert_by_block_kind");
    group.throughput(Throughput::Elements(records.len() as u64));
    group.sample_size(10);
    for (name, kind) in [("coco", BlockKind::Coco), ("uss", BlockKind::Uss)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut sketch = config(&[32, 12], kind, true).build(0.001).unwrap();
                for rec in &records {
                    sketch.insert_ip(rec.src_ip, 1).unwrap();
                }
                sketch.n()
            })
        });
    }
    group.finish();
}

fn bench_connection(c: &mut Criterion) {
    let records = trace();
    let mut group = c.benchmark_group("insert_connection_ablation");
    group.throughput(Throughput::Elements(records.len() as u64));
    group.sample_size(10);
    for (name, connection) in [("with", true), ("without", false)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut sketch = config(&[32, 24, 12], BlockKind::Coco, connection)
                    .build(0.001)
                    .unwrap();
                for rec in &records {
                    sketch.insert_ip(rec.src_ip, 1).unwrap();
                }
                sketch.n()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_levels, bench_block_kinds, bench_connection);
criterion_main!(benches);
