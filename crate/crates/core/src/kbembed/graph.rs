use std::collections::{BTreeMap, HashMap};

use kbie_tensor::{Adam, Graph, ParamId, ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::data::TripleSet;
use super::uniform_init;
use crate::error::{config_err, Result};
use crate::kbstore::{EmbeddingStore, KbSource};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphEmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for GraphEmbedConfig {
    fn default() -> Self {
        GraphEmbedConfig {
            dim: 16,
            epochs: 200,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Linear object classifier: `score(o | s, r) = (v_s + v_r) . w_o`.
pub struct KbGraphModel {
    pub params: ParamSet,
    entity: ParamId,
    relation: ParamId,
    /// `dim x |entities|`; column `o` is `w_o`.
    output: ParamId,
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ix: HashMap<String, usize>,
    relation_ix: HashMap<String, usize>,
}

impl KbGraphModel {
    pub fn new(triples: &TripleSet, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(config_err("dim must be positive"));
        }
        if triples.is_empty() {
            return Err(config_err("triple set is empty"));
        }
        let entities = triples.entities().to_vec();
        let relations = triples.relations().to_vec();
        let (ne, nr) = (entities.len(), relations.len());
        let mut rng = substream(seed, "kb-graph/init");
        let mut params = ParamSet::new();
        let entity = params.add(
            "kbgraph/entity",
            Tensor::matrix(ne, dim, uniform_init(&mut rng, ne * dim, dim))?.with_grad(),
        )?;
        let relation = params.add(
            "kbgraph/relation",
            Tensor::matrix(nr, dim, uniform_init(&mut rng, nr * dim, dim))?.with_grad(),
        )?;
        let output = params.add(
            "kbgraph/output",
            Tensor::matrix(dim, ne, uniform_init(&mut rng, dim * ne, dim))?.with_grad(),
        )?;
        let entity_ix = entities.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let relation_ix = relations.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        Ok(KbGraphModel {
            params,
            entity,
            relation,
            output,
            entities,
            relations,
            entity_ix,
            relation_ix,
        })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    /// Mean full-softmax cross-entropy of the objects of `triples`.
    pub fn loss(&self, g: &mut Graph, params: &ParamSet, triples: &TripleSet) -> kbie_tensor::Result<Var> {
        let ne = self.entities.len();
        let s: Vec<usize> = triples.triples().iter().map(|t| self.entity_ix[&t.subj]).collect();
        let r: Vec<usize> = triples.triples().iter().map(|t| self.relation_ix[&t.rel]).collect();
        let o: Vec<usize> = triples.triples().iter().map(|t| self.entity_ix[&t.obj]).collect();
        let n = s.len();
        let (ev, rv, wv) = (
            g.param(params, self.entity),
            g.param(params, self.relation),
            g.param(params, self.output),
        );
        let vs = g.gather(ev, &s)?;
        let vr = g.gather(rv, &r)?;
        let x = g.add(vs, vr)?;
        let logits = g.matmul(x, wv)?;
        let flat = g.reshape(logits, n * ne, 1)?;
        let rows: Vec<Vec<usize>> = (0..n).map(|i| (i * ne..(i + 1) * ne).collect()).collect();
        let lse = g.segment_logsumexp(flat, &rows)?;
        let gold_ix: Vec<usize> = o.iter().enumerate().map(|(i, &oi)| i * ne + oi).collect();
        let gold = g.gather(flat, &gold_ix)?;
        let diff = g.sub(lse, gold)?;
        g.mean(diff, None)
    }

    /// Scores of every entity as the object of `(subj, rel)`.
    pub fn scores(&self, subj: &str, rel: &str) -> Option<Vec<f64>> {
        let s = *self.entity_ix.get(subj)?;
        let r = *self.relation_ix.get(rel)?;
        let v = self.params.get(self.entity).row_slice(s);
        let w = self.params.get(self.relation).row_slice(r);
        let out = self.params.get(self.output);
        let ne = self.entities.len();
        let mut scores = vec![0.0; ne];
        for (k, (a, b)) in v.iter().zip(w).enumerate() {
            let x = a + b;
            for (sc, wo) in scores.iter_mut().zip(out.row_slice(k)) {
                *sc += x * wo;
            }
        }
        debug_assert_eq!(scores.len(), ne);
        Some(scores)
    }

    /// Highest-scoring object (first on ties).
    pub fn predict(&self, subj: &str, rel: &str) -> Option<&str> {
        let scores = self.scores(subj, rel)?;
        let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        Some(&self.entities[best])
    }

    pub fn store(&self) -> Result<EmbeddingStore> {
        let t = self.params.get(self.entity);
        let mut store = EmbeddingStore::new(KbSource::Graph, t.cols())?;
        for (i, e) in self.entities.iter().enumerate() {
            store.insert(e.clone(), t.row_slice(i))?;
        }
        Ok(store)
    }

    pub fn relation_vectors(&self) -> BTreeMap<String, Vec<f64>> {
        let t = self.params.get(self.relation);
        self.relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), t.row_slice(i).to_vec()))
            .collect()
    }
}

pub struct GraphEmbeddings {
    pub model: KbGraphModel,
    pub store: EmbeddingStore,
    pub relations: BTreeMap<String, Vec<f64>>,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Full-batch Adam on the object cross-entropy, one step per epoch.
pub fn train_kb_graph(triples: &TripleSet, cfg: &GraphEmbedConfig) -> Result<GraphEmbeddings> {
    if !(cfg.lr >= 0.0) {
        return Err(config_err("lr must be non-negative"));
    }
    let mut model = KbGraphModel::new(triples, cfg.dim, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let eval = |model: &KbGraphModel| -> Result<f64> {
        let mut g = Graph::new();
        let l = model.loss(&mut g, &model.params, triples)?;
        Ok(g.value(l).item()?)
    };
    let initial_loss = eval(&model)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let l = model.loss(&mut g, &model.params, triples)?;
        g.backward(l, &mut model.params)?;
        adam.step(&mut model.params)?;
        epoch_losses.push(eval(&model)?);
    }
    let store = model.store()?;
    let relations = model.relation_vectors();
    Ok(GraphEmbeddings {
        model,
        store,
        relations,
        initial_loss,
        epoch_losses,
    })
}
