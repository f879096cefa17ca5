//! Sequential vs data-parallel throughput for the batch entry points.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use segcross::chunker::{split_documents, ChunkerConfig, EmbedderSpec, RetrievalIndex};
use segcross::training::{evaluate, synth_corpus, tokenize_all, vocab_for, EvalOptions, SynthConfig, TrainConfig};
use segcross::{Parallelism, SegmenterModel};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn corpus() -> Vec<segcross::textprep::LabeledDocument> {
    synth_corpus(&SynthConfig { n_docs: 64, n_topics: 3, seed: 7, ..SynthConfig::default() }).unwrap()
}

fn bench_evaluate(c: &mut Criterion) {
    let docs = corpus();
    let cfg = TrainConfig::default();
    let vocab = vocab_for(&docs, 1);
    let tok = tokenize_all(&docs, &vocab, &cfg.preprocess).unwrap();
    let model = SegmenterModel::new(vocab, cfg.preprocess.clone(), cfg.encoder.clone(), cfg.csfm.clone()).unwrap();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, mode) in MODES {
        let opts = EvalOptions { parallelism: mode, ..EvalOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| evaluate(&tok, &model, opts).unwrap())
        });
    }
    group.finish();
}

fn bench_chunk_and_index(c: &mut Criterion) {
    let docs: Vec<String> = corpus().iter().map(|d| d.sentences.join(". ") + ".").collect();
    // alternate cuts keep the recursion busy without a trained model
    let model = |s: &[&str]| s.iter().enumerate().map(|(i, _)| (i % 2) as u8).collect::<Vec<u8>>();
    let cfg = ChunkerConfig { max_chunk_len: 200, ..ChunkerConfig::default() };

    let mut group = c.benchmark_group("chunk");
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| split_documents(&docs, &model, &cfg, mode).unwrap()));
    }
    group.finish();

    let chunks: Vec<_> =
        split_documents(&docs, &model, &cfg, Parallelism::Sequential).unwrap().into_iter().flatten().collect();
    let mut group = c.benchmark_group("index_build");
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| RetrievalIndex::build(chunks.clone(), EmbedderSpec::default(), mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_evaluate, bench_chunk_and_index);
criterion_main!(benches);
