//! The full pipeline: encoder, spans, optional knowledge-base module and
//! heads, with checkpointing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use kbie_tensor::{ChaCha8Rng, Graph, ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelVocab};
use crate::encoder::{Encoder, EncoderConfig, TokenVocab};
use crate::error::{config_err, KbieError, Result};
use crate::heads::{self, align_gold, coref_loss, coref_pairs, re_pairs, GoldAlignment, HeadConfig, Heads, MentionPredictions};
use crate::kbmodule::{resolve_candidates, KbConfig, KbModule, KbOutput, ResolvedCandidate, WeightingScheme};
use crate::kbstore::{CandidateDictionary, EmbeddingStore, KbSource};
use crate::metrics::ElItem;
use crate::nn::Ffnn;
use crate::postproc::{build_clusters, unify};
use crate::rng::substream;
use crate::spans::{enumerate_spans, keep_count, prune, span_repr, Span, SpanConfig, WidthEmbedding};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub spans: SpanConfig,
    /// Absent for the baseline without knowledge-base vectors.
    pub kb: Option<KbConfig>,
    pub heads: HeadConfig,
    pub pruner_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            spans: SpanConfig::default(),
            kb: None,
            heads: HeadConfig::default(),
            pruner_hidden: 32,
        }
    }
}

/// Candidate dictionary and entity vectors of one knowledge-base source.
#[derive(Clone, Debug, PartialEq)]
pub struct KbResources {
    pub dictionary: CandidateDictionary,
    pub store: EmbeddingStore,
}

impl KbResources {
    pub fn source(&self) -> KbSource {
        self.store.source()
    }
}

/// Graph handles of one forward pass.
pub struct ForwardOutput {
    /// Every enumerated span.
    pub all: Vec<Span>,
    /// Positions in `all` of the spans kept by the pruner.
    pub kept_index: Vec<usize>,
    pub kept: Vec<Span>,
    /// `all x (span dim [+ kb dim])`.
    pub spans: Var,
    /// `all x |entity types|`.
    pub ner: Var,
    pub coref_pairs: Vec<(usize, usize)>,
    pub coref: Option<Var>,
    pub re_pairs: Vec<(usize, usize)>,
    pub re: Option<Var>,
    pub kb: Option<(KbOutput, Vec<Vec<ResolvedCandidate>>)>,
    pub missing_vectors: usize,
}

/// Loss components as graph nodes.
pub struct LossParts {
    pub total: Var,
    pub ner: Var,
    pub coref: Var,
    pub re: Option<Var>,
    pub alignment: GoldAlignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    vocab: TokenVocab,
    labels: LabelVocab,
    kb_source: Option<KbSource>,
    seed: u64,
}

const PARAMS_FILE: &str = "params.bin";
const META_FILE: &str = "model.json";
const DICT_FILE: &str = "dictionary.jsonl";
const STORE_FILE: &str = "entities.bin";

/// Pruning score of each span: its largest NER logit, which includes the
/// scalar pruner output.
pub fn span_scores(ner: &Tensor) -> Vec<f64> {
    (0..ner.rows())
        .map(|r| ner.row_slice(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: TokenVocab,
    pub labels: LabelVocab,
    pub resources: Option<KbResources>,
    pub params: ParamSet,
    pub seed: u64,
    pub encoder: Encoder,
    pub widths: WidthEmbedding,
    pub pruner: Ffnn,
    pub kb: Option<KbModule>,
    pub heads: Heads,
}

impl Model {
    /// Fresh model. The knowledge-base module is built iff `cfg.kb` is set,
    /// which requires `resources`.
    pub fn new(
        cfg: &ModelConfig,
        vocab: TokenVocab,
        labels: LabelVocab,
        resources: Option<KbResources>,
        pretrained: Option<&HashMap<String, Vec<f64>>>,
        seed: u64,
    ) -> Result<Self> {
        cfg.spans.validate()?;
        if cfg.kb.is_some() != resources.is_some() {
            return Err(config_err(
                "a weighting scheme needs knowledge-base resources and resources need a scheme",
            ));
        }
        let mut rng = substream(seed, "model/init");
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, &cfg.encoder, &vocab, pretrained, &mut rng)?;
        let widths = WidthEmbedding::new(&mut params, &cfg.spans, &mut rng)?;
        let span_dim = 2 * cfg.encoder.output_dim() + cfg.spans.width_dim;
        let pruner_dims = if cfg.pruner_hidden == 0 {
            vec![span_dim, 1]
        } else {
            vec![span_dim, cfg.pruner_hidden, 1]
        };
        let pruner = Ffnn::new(&mut params, "spans/pruner", &pruner_dims, cfg.heads.activation, &mut rng)?;
        let kb = match (&cfg.kb, &resources) {
            (Some(kc), Some(res)) => Some(KbModule::new(&mut params, kc, span_dim, res.store.dim(), &mut rng)?),
            _ => None,
        };
        let head_dim = span_dim + kb.as_ref().map_or(0, |k| k.dim);
        let heads = Heads::new(&mut params, &cfg.heads, head_dim, &labels, &mut rng)?;
        Ok(Model {
            cfg: cfg.clone(),
            vocab,
            labels,
            resources,
            params,
            seed,
            encoder,
            widths,
            pruner,
            kb,
            heads,
        })
    }

    pub fn scheme(&self) -> Option<WeightingScheme> {
        self.cfg.kb.as_ref().map(|k| k.scheme)
    }

    /// Token states for `doc`; with `word_dropout`, training-time unknown-word
    /// substitution is applied.
    pub fn encode(&self, g: &mut Graph, params: &ParamSet, doc: &Document, word_dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        if doc.tokens.is_empty() {
            return Err(KbieError::Validation {
                doc: doc.id.clone(),
                msg: "document has no tokens".into(),
            });
        }
        self.encoder.encode(g, params, &self.vocab, &doc.tokens, word_dropout)
    }

    /// Scores every enumerated span with the NER head, keeps the spans with
    /// the highest best-label logit and runs the pair heads on those.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, doc: &Document, word_dropout: Option<&mut ChaCha8Rng>) -> Result<ForwardOutput> {
        let h = self.encode(g, params, doc, word_dropout)?;
        let all = enumerate_spans(doc.tokens.len(), self.cfg.spans.max_width);
        let reprs = span_repr(g, params, h, &all, &self.widths)?;
        let m = self.pruner.forward(g, params, reprs)?;
        let (x, kb, missing_vectors) = match (&self.kb, &self.resources) {
            (Some(module), Some(res)) => {
                let (cands, missing) = resolve_candidates(doc, &all, &res.dictionary, &res.store);
                let out = module.forward(g, params, reprs, &cands)?;
                let x = g.concat(&[reprs, out.e], 1)?;
                (x, Some((out, cands)), missing)
            }
            _ => (reprs, None, 0),
        };
        let ner = self.heads.ner_logits(g, params, x, m)?;
        let keep = keep_count(doc.tokens.len(), self.cfg.spans.keep_ratio);
        let idx = prune(&span_scores(g.value(ner)), keep);
        let kept: Vec<Span> = idx.iter().map(|&i| all[i]).collect();
        let xk = g.gather(x, &idx)?;
        let cp = coref_pairs(kept.len());
        let coref = self.heads.coref_scores(g, params, xk, &cp)?;
        let rp = if self.heads.re.is_some() { re_pairs(kept.len()) } else { vec![] };
        let re = self.heads.re_logits(g, params, xk, &rp)?;
        Ok(ForwardOutput {
            all,
            kept_index: idx,
            kept,
            spans: x,
            ner,
            coref_pairs: cp,
            coref,
            re_pairs: rp,
            re,
            kb,
            missing_vectors,
        })
    }

    /// Weighted sum of the three head losses.
    pub fn loss(&self, g: &mut Graph, out: &ForwardOutput, doc: &Document) -> Result<LossParts> {
        let align = align_gold(doc, &out.kept);
        let w = self.cfg.heads.loss_weights;
        let ner_t = heads::ner_targets(doc, &self.labels, &align_gold(doc, &out.all));
        let ner = g.bce_with_logits(out.ner, &ner_t)?;
        let coref = coref_loss(g, out.coref, &align, &out.coref_pairs)?;
        let re = match out.re {
            Some(r) => {
                let t = heads::re_targets(doc, &self.labels, &align, &out.re_pairs);
                Some(g.bce_with_logits(r, &t)?)
            }
            None => None,
        };
        let a = g.scale(ner, w.ner)?;
        let b = g.scale(coref, w.coref)?;
        let mut total = g.add(a, b)?;
        if let Some(re) = re {
            let c = g.scale(re, w.re)?;
            total = g.add(total, c)?;
        }
        Ok(LossParts {
            total,
            ner,
            coref,
            re,
            alignment: align,
        })
    }

    pub fn decode(&self, g: &Graph, out: &ForwardOutput) -> MentionPredictions {
        let coref = out.coref.map(|v| g.value(v).data().to_vec()).unwrap_or_default();
        let re = out.re.map(|v| g.value(v).data().to_vec()).unwrap_or_default();
        let n = self.labels.entity_types.len();
        let all_ner = g.value(out.ner).data();
        let ner: Vec<f64> = out
            .kept_index
            .iter()
            .flat_map(|&i| all_ner[i * n..(i + 1) * n].iter().copied())
            .collect();
        heads::decode(
            &out.kept,
            &ner,
            self.labels.entity_types.len(),
            &coref,
            &re,
            self.labels.relation_types.len(),
        )
    }

    /// Entity-centric prediction in corpus format.
    pub fn predict(&self, doc: &Document) -> Result<Document> {
        if doc.tokens.is_empty() {
            return Ok(Document {
                mentions: vec![],
                clusters: vec![],
                relations: vec![],
                ..doc.clone()
            });
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, doc, None)?;
        let pred = self.decode(&g, &out);
        let (clusters, _) = build_clusters(&pred.antecedents, &pred.ner);
        Ok(unify(doc, &pred, &clusters, &self.labels))
    }

    pub fn predict_all(&self, docs: &[Document]) -> Result<Vec<Document>> {
        docs.iter().map(|d| self.predict(d)).collect()
    }

    /// Candidate weights under `scheme` for the given spans of `doc`, with
    /// candidates in dictionary order. Attention schemes use this model's
    /// scorer and must match its configured scheme.
    pub fn span_weights(&self, doc: &Document, spans: &[Span], scheme: WeightingScheme) -> Result<Vec<Vec<(String, f64, f64)>>> {
        let res = self
            .resources
            .as_ref()
            .ok_or_else(|| config_err("the baseline model has no candidate weights"))?;
        let (cands, _) = resolve_candidates(doc, spans, &res.dictionary, &res.store);
        let weights: Vec<Vec<f64>> = if scheme.is_attention() {
            let module = self.kb.as_ref().filter(|k| k.cfg.scheme == scheme).ok_or_else(|| {
                config_err(format!("model was trained with {:?}, not {scheme}", self.scheme()))
            })?;
            if spans.is_empty() || doc.tokens.is_empty() {
                vec![vec![]; spans.len()]
            } else {
                let mut g = Graph::new();
                let h = self.encode(&mut g, &self.params, doc, None)?;
                let reprs = span_repr(&mut g, &self.params, h, spans, &self.widths)?;
                let out = module.forward(&mut g, &self.params, reprs, &cands)?;
                KbModule::weights_of(&g, &out, &cands)
            }
        } else {
            let renorm = self.cfg.kb.as_ref().map_or(true, |k| k.renormalize_prior);
            cands
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        return Ok(vec![]);
                    }
                    let p: Vec<f64> = c.iter().map(|x| x.prior).collect();
                    crate::kbmodule::candidate_weights(scheme, &p, None, renorm)
                })
                .collect::<Result<_>>()?
        };
        // Back to dictionary order.
        Ok(spans
            .iter()
            .zip(cands.iter().zip(weights))
            .map(|(s, (c, w))| {
                let by_id: HashMap<&str, (f64, f64)> =
                    c.iter().zip(&w).map(|(x, &a)| (x.entity.as_str(), (x.prior, a))).collect();
                res.dictionary
                    .lookup(&doc.surface(s.start, s.end))
                    .iter()
                    .map(|d| {
                        let (p, a) = by_id[d.entity.as_str()];
                        (d.entity.clone(), p, a)
                    })
                    .collect()
            })
            .collect())
    }

    /// Gold-linked gold mentions with their candidate weights.
    pub fn el_items(&self, doc: &Document, scheme: WeightingScheme) -> Result<Vec<ElItem>> {
        let mut spans = Vec::new();
        let mut gold = Vec::new();
        let clusters = doc.mention_cluster_index();
        for (m, &c) in doc.mentions.iter().zip(&clusters) {
            if let Some(link) = &doc.clusters[c].link {
                spans.push(Span::new(m.start, m.end));
                gold.push(link.clone());
            }
        }
        let weights = self.span_weights(doc, &spans, scheme)?;
        Ok(weights
            .into_iter()
            .zip(gold)
            .map(|(w, gold)| ElItem {
                candidates: w.iter().map(|x| x.0.clone()).collect(),
                weights: w.iter().map(|x| x.2).collect(),
                gold,
            })
            .collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let meta = ModelMeta {
            config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            kb_source: self.resources.as_ref().map(KbResources::source),
            seed: self.seed,
        };
        fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
        self.params.save(dir.join(PARAMS_FILE))?;
        if let Some(res) = &self.resources {
            res.dictionary.save(dir.join(DICT_FILE))?;
            res.store.save(dir.join(STORE_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut meta: ModelMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
        meta.vocab.reindex();
        let resources = match meta.kb_source {
            Some(_) => Some(KbResources {
                dictionary: CandidateDictionary::load(dir.join(DICT_FILE))?,
                store: EmbeddingStore::load(dir.join(STORE_FILE))?,
            }),
            None => None,
        };
        let mut model = Model::new(&meta.config, meta.vocab, meta.labels, resources, None, meta.seed)?;
        let loaded = ParamSet::load(dir.join(PARAMS_FILE))?;
        model.set_params(&loaded)?;
        Ok(model)
    }

    /// Copy values from `other`, which must hold the same names and shapes.
    pub fn set_params(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(config_err("checkpoint does not match the model structure"));
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            let src = other
                .by_name(&name)
                .ok_or_else(|| config_err(format!("checkpoint lacks parameter {name}")))?;
            let dst = self.params.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(config_err(format!("parameter {name} has the wrong shape")));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

