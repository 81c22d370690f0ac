//! Retrieval hot-loop benchmarks: sequential vs rayon chunk ranking and
//! embedding at desk-scale store sizes.
//!
//! Run with `cargo bench -p magellan-core` (parallel feature on by
//! default) and compare against `--no-default-features` builds.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use magellan_core::kb::{kb_handle, ChunkingParams, KnowledgeBase};
use magellan_core::provider::hashed::{HashedTfEmbedding, HASHED_TF_ID};
use magellan_core::provider::EmbeddingProvider;
use magellan_core::types::{RawKnowledgeRecord, RecordSource};

fn synthetic_records(n: usize) -> Vec<RawKnowledgeRecord> {
    (0..n)
        .map(|i| {
            let words: Vec<String> = (0..120)
                .map(|j| format!("término{} relato{} archivo{}", (i + j) % 97, j % 53, i % 31))
                .collect();
            RawKnowledgeRecord::new(
                RecordSource::Url {
                    url: format!("fixture://bench/{i}"),
                },
                words.join(" "),
                "bench",
                1,
            )
        })
        .collect()
}

fn populated_kb(n_records: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new(Arc::new(HashedTfEmbedding::new()), HASHED_TF_ID).with_params(
        ChunkingParams {
            chunk_size: 64,
            overlap: 8,
        },
    );
    kb.ingest(&synthetic_records(n_records)).unwrap();
    kb
}

fn bench_ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("chunk_ranking");
    for n in [100usize, 1000] {
        let kb = populated_kb(n);
        group.bench_with_input(BenchmarkId::new("retrieve_top5", n), &n, |b, _| {
            b.iter(|| black_box(kb.retrieve("término3 relato7 archivo2", 5).unwrap()))
        });
    }
    group.finish();

    // Direct seq-vs-par comparison on the scoring kernel.
    let kb = populated_kb(1000);
    let handle = kb_handle(kb);
    let kb = handle.read().unwrap();
    let embedder = HashedTfEmbedding::new();
    let query = embedder
        .embed(&["término3 relato7 archivo2".to_string()])
        .unwrap()
        .remove(0);
    let chunks = kb.retrieve("término3", usize::MAX / 2).unwrap();
    let chunk_refs: Vec<&magellan_core::kb::Chunk> = chunks.iter().map(|(c, _)| c).collect();

    let mut group = c.benchmark_group("scoring_kernel");
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(magellan_core::kb::rank_chunks_seq(&query, &chunk_refs)))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("rayon", |b| {
        b.iter(|| black_box(magellan_core::kb::rank_chunks_par(&query, &chunk_refs)))
    });
    group.finish();
}

fn bench_embedding(c: &mut Criterion) {
    let embedder = HashedTfEmbedding::new();
    let texts: Vec<String> = (0..256)
        .map(|i| format!("document {i} about copper facades and harbor ledgers number {i}"))
        .collect();
    c.bench_function("embed_256_texts", |b| {
        b.iter(|| black_box(embedder.embed(&texts).unwrap()))
    });
}

criterion_group!(benches, bench_ranking, bench_embedding);
criterion_main!(benches);
