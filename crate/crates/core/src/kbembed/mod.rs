//! Entity embedding trainers: skip-gram over a hyperlinked corpus and a
//! linear object classifier over knowledge-graph triples.

mod data;
mod graph;
mod text;

pub use data::{Anchor, HyperCorpus, Page, Triple, TripleSet};
pub use graph::{train_kb_graph, GraphEmbedConfig, GraphEmbeddings, KbGraphModel};
pub use text::{train_kb_text, TextEmbedConfig, TextEmbeddings};

use rand::Rng;

/// `n` draws from uniform(-0.5/dim, 0.5/dim).
pub(crate) fn uniform_init(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<f64> {
    let b = 0.5 / dim as f64;
    (0..n).map(|_| rng.gen_range(-b..b)).collect()
}
