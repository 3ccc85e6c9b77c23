//! Shared fixtures for the pipeline benchmarks: a seeded synthetic corpus,
//! its lexical index, and a batch of noisy queries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use requery_core::corpus::{build_db, ChunkConfig, ChunkStore};
use requery_core::demo::{generate_corpus, generate_dataset, DemoConfig};
use requery_core::retrieval::{Bm25Params, LexicalIndex, TokenizeMode};
use requery_core::synth::QuerySample;

pub struct Fixture {
    pub store: ChunkStore,
    pub index: LexicalIndex,
    pub dataset: Vec<QuerySample>,
}

pub fn fixture(num_chunks: usize, num_samples: usize) -> Fixture {
    let cfg = DemoConfig {
        num_chunks,
        num_samples,
        ..DemoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let docs = generate_corpus(&cfg, &mut rng);
    let store = build_db(&docs, &ChunkConfig::new(10_000, 0).unwrap()).unwrap();
    let dataset = generate_dataset(&cfg, &mut rng);
    let index = LexicalIndex::build(&store, Bm25Params::default(), TokenizeMode::Word);
    Fixture {
        store,
        index,
        dataset,
    }
}
