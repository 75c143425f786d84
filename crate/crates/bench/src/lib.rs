//! Shared fixtures for the benchmarks.

use mrfg_core::evaluation::pipeline::{prepare_graph, prepare_seed, PreparedGraph, SeedSplit};
use mrfg_core::synth::{generate, SynthSpec};

pub struct Fixture {
    pub graph: PreparedGraph,
    pub split: SeedSplit,
}

/// A synthetic corpus with planted-relevance filtering, split with seed 0.
pub fn fixture(n_users: usize, dim: usize) -> Fixture {
    let spec = SynthSpec {
        n_users,
        dim,
        ..Default::default()
    };
    let s = generate(&spec).expect("valid synth spec");
    let target = s.corpus.users[0].target.clone();
    let graph = prepare_graph(&s.corpus, std::slice::from_ref(&target), &s.retained_on_topic(), &s.embedder()).expect("graph");
    let split = prepare_seed(&graph, &target, None, 0, 16).expect("split");
    Fixture { graph, split }
}
