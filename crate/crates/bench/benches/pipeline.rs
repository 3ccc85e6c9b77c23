use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use requery_bench::fixture;
use requery_core::grpo::{train_step, GrpoConfig, TrainContext};
use requery_core::policy::{sample_rewrite, PolicyParams, TermFeaturizer};
use requery_core::retrieval::{rrf_fuse, search_lexical, toy_embed, LexicalRetriever};
use requery_core::reward::{ndcg_at_k, RewardConfig, RewardEvaluator};

fn bench_search_lexical(c: &mut Criterion) {
    let fx = fixture(200, 50);
    let query = &fx.dataset[0].query;
    c.bench_function("search_lexical/200 chunks", |b| {
        b.iter(|| search_lexical(&fx.index, black_box(query), 10))
    });
}

fn bench_rrf(c: &mut Criterion) {
    let fx = fixture(200, 50);
    let a = search_lexical(&fx.index, &fx.dataset[0].query, 30);
    let b_list = search_lexical(&fx.index, &fx.dataset[1].query, 30);
    c.bench_function("rrf_fuse/two lists of 30", |b| {
        b.iter(|| rrf_fuse(black_box(&[a.clone(), b_list.clone()]), 60))
    });
}

fn bench_ndcg(c: &mut Criterion) {
    let fx = fixture(200, 50);
    let ranked = search_lexical(&fx.index, &fx.dataset[0].query, 10);
    let gold = fx.dataset[0].target_index;
    c.bench_function("ndcg_at_k", |b| {
        b.iter(|| ndcg_at_k(black_box(&ranked), |c| c == gold, 3))
    });
}

fn bench_toy_embed(c: &mut Criterion) {
    let fx = fixture(50, 10);
    let text = &fx.dataset[0].query;
    c.bench_function("toy_embed/64 dims", |b| {
        b.iter(|| toy_embed(black_box(text), 64, 7))
    });
}

fn bench_rollout(c: &mut Criterion) {
    let fx = fixture(50, 10);
    let featurizer = TermFeaturizer::from_lexical(&fx.index);
    let params = PolicyParams::zeros();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let query = &fx.dataset[0].query;
    c.bench_function("sample_rewrite/33 terms", |b| {
        b.iter(|| sample_rewrite(&params, &featurizer, black_box(query), 1.0, &mut rng))
    });
}

fn bench_train_step(c: &mut Criterion) {
    let fx = fixture(50, 10);
    let featurizer = TermFeaturizer::from_lexical(&fx.index);
    let retriever = LexicalRetriever { index: &fx.index };
    let evaluator = RewardEvaluator::new(&fx.store, RewardConfig::default());
    let ctx = TrainContext {
        featurizer: &featurizer,
        retriever: &retriever,
        evaluator: &evaluator,
    };
    let cfg = GrpoConfig::default();
    let params = PolicyParams::zeros();
    let batch = &fx.dataset[..4];
    c.bench_function("train_step/4 samples G=8", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        b.iter(|| train_step(&params, black_box(batch), &ctx, &cfg, 1, &mut rng).unwrap())
    });
}

criterion_group!(
    benches,
    bench_search_lexical,
    bench_rrf,
    bench_ndcg,
    bench_toy_embed,
    bench_rollout,
    bench_train_step
);
criterion_main!(benches);
