use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::HyperCorpus;
use super::uniform_init;
use crate::error::{config_err, Result};
use crate::kbstore::{EmbeddingStore, KbSource};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight of the page-entity -> linked-entity pairs relative to the
    /// entity -> context-word pairs.
    pub page_link_weight: f64,
}

impl Default for TextEmbedConfig {
    fn default() -> Self {
        TextEmbedConfig {
            dim: 16,
            window: 3,
            negatives: 4,
            epochs: 20,
            lr: 0.05,
            seed: 0,
            page_link_weight: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Target {
    Word(usize),
    Entity(usize),
}

#[derive(Clone, Copy, Debug)]
struct Pair {
    entity: usize,
    target: Target,
    weight: f64,
}

pub struct TextEmbeddings {
    pub store: EmbeddingStore,
    /// Output (context) vectors of the words.
    pub words: BTreeMap<String, Vec<f64>>,
    /// Sampled training loss before the first epoch.
    pub initial_loss: f64,
    /// Sampled training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Tables {
    dim: usize,
    ent_in: Vec<f64>,
    word_out: Vec<f64>,
    ent_out: Vec<f64>,
}

impl Tables {
    fn target(&self, t: Target) -> &[f64] {
        let d = self.dim;
        match t {
            Target::Word(i) => &self.word_out[i * d..(i + 1) * d],
            Target::Entity(i) => &self.ent_out[i * d..(i + 1) * d],
        }
    }

    fn target_mut(&mut self, t: Target) -> &mut [f64] {
        let d = self.dim;
        match t {
            Target::Word(i) => &mut self.word_out[i * d..(i + 1) * d],
            Target::Entity(i) => &mut self.ent_out[i * d..(i + 1) * d],
        }
    }

    fn score(&self, entity: usize, t: Target) -> f64 {
        let d = self.dim;
        let u = &self.ent_in[entity * d..(entity + 1) * d];
        u.iter().zip(self.target(t)).map(|(a, b)| a * b).sum()
    }
}

fn stable_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn pairs_of(
    corpus: &HyperCorpus,
    entity_ix: &HashMap<&str, usize>,
    word_ix: &HashMap<&str, usize>,
    cfg: &TextEmbedConfig,
) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for page in &corpus.pages {
        for a in &page.anchors {
            let e = entity_ix[a.entity.as_str()];
            let lo = a.start.saturating_sub(cfg.window);
            let hi = (a.end + cfg.window).min(page.tokens.len() - 1);
            for pos in (lo..a.start).chain(a.end + 1..=hi) {
                pairs.push(Pair {
                    entity: e,
                    target: Target::Word(word_ix[page.tokens[pos].as_str()]),
                    weight: 1.0,
                });
            }
            if cfg.page_link_weight > 0.0 && a.entity != page.page_entity {
                pairs.push(Pair {
                    entity: entity_ix[page.page_entity.as_str()],
                    target: Target::Entity(e),
                    weight: cfg.page_link_weight,
                });
            }
        }
    }
    pairs
}

fn draw_negative(rng: &mut impl Rng, t: Target, words: usize, entities: usize) -> Target {
    match t {
        Target::Word(_) => Target::Word(rng.gen_range(0..words)),
        Target::Entity(_) => Target::Entity(rng.gen_range(0..entities)),
    }
}

/// Skip-gram with negative sampling over a hyperlinked corpus. Entity input
/// vectors predict the words around their anchors and the entities linked
/// from their own page; negatives are drawn uniformly.
pub fn train_kb_text(corpus: &HyperCorpus, cfg: &TextEmbedConfig) -> Result<TextEmbeddings> {
    if cfg.dim == 0 || cfg.window == 0 || cfg.negatives == 0 {
        return Err(config_err("dim, window and negatives must be positive"));
    }
    if !(cfg.lr >= 0.0) || !(cfg.page_link_weight >= 0.0) {
        return Err(config_err("lr and page_link_weight must be non-negative"));
    }
    if corpus.pages.iter().all(|p| p.anchors.is_empty()) {
        return Err(config_err("hyperlinked corpus has no anchors"));
    }
    let entities = corpus.entities();
    let words: Vec<String> = corpus
        .pages
        .iter()
        .flat_map(|p| p.tokens.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let entity_ix: HashMap<&str, usize> =
        entities.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let word_ix: HashMap<&str, usize> =
        words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let pairs = pairs_of(corpus, &entity_ix, &word_ix, cfg);
    if pairs.is_empty() {
        return Err(config_err("hyperlinked corpus yields no training pairs"));
    }

    let d = cfg.dim;
    let mut init = substream(cfg.seed, "kb-text/init");
    let mut t = Tables {
        dim: d,
        ent_in: uniform_init(&mut init, entities.len() * d, d),
        word_out: uniform_init(&mut init, words.len() * d, d),
        ent_out: uniform_init(&mut init, entities.len() * d, d),
    };

    // Fixed negatives for the reported loss, so epochs are comparable.
    let mut eval_rng = substream(cfg.seed, "kb-text/eval");
    let eval_negs: Vec<Vec<Target>> = pairs
        .iter()
        .map(|p| {
            (0..cfg.negatives)
                .map(|_| draw_negative(&mut eval_rng, p.target, words.len(), entities.len()))
                .collect()
        })
        .collect();
    let eval_loss = |t: &Tables, pairs: &[Pair]| -> f64 {
        let total: f64 = pairs
            .iter()
            .zip(&eval_negs)
            .map(|(p, negs)| {
                let pos = -stable_log_sigmoid(t.score(p.entity, p.target));
                let neg: f64 = negs
                    .iter()
                    .map(|&n| -stable_log_sigmoid(-t.score(p.entity, n)))
                    .sum();
                p.weight * (pos + neg)
            })
            .sum();
        total / pairs.len() as f64
    };
    let initial_loss = eval_loss(&t, &pairs);

    let mut shuffle = substream(cfg.seed, "kb-text/shuffle");
    let mut neg_rng = substream(cfg.seed, "kb-text/negatives");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grad_u = vec![0.0; d];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for &k in &order {
            let p = pairs[k];
            grad_u.iter_mut().for_each(|g| *g = 0.0);
            let mut step = |t: &mut Tables, target: Target, label: f64| {
                let s = sigmoid(t.score(p.entity, target));
                let g = cfg.lr * p.weight * (s - label);
                let u = t.ent_in[p.entity * d..(p.entity + 1) * d].to_vec();
                let v = t.target_mut(target);
                for j in 0..d {
                    grad_u[j] += g * v[j];
                    v[j] -= g * u[j];
                }
            };
            step(&mut t, p.target, 1.0);
            for _ in 0..cfg.negatives {
                let n = draw_negative(&mut neg_rng, p.target, words.len(), entities.len());
                step(&mut t, n, 0.0);
            }
            for (u, g) in t.ent_in[p.entity * d..(p.entity + 1) * d].iter_mut().zip(&grad_u) {
                *u -= g;
            }
        }
        epoch_losses.push(eval_loss(&t, &pairs));
    }

    let mut store = EmbeddingStore::new(KbSource::Text, d)?;
    for (i, e) in entities.iter().enumerate() {
        store.insert(e.clone(), &t.ent_in[i * d..(i + 1) * d])?;
    }
    let words = words
        .into_iter()
        .enumerate()
        .map(|(i, w)| (w, t.word_out[i * d..(i + 1) * d].to_vec()))
        .collect();
    Ok(TextEmbeddings {
        store,
        words,
        initial_loss,
        epoch_losses,
    })
}
