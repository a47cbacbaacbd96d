//! Candidate weighting and the knowledge-base vector `e = sum_j alpha_j xi(c_j)`
//! that is appended to span vectors.

use std::fmt;
use std::str::FromStr;

use kbie_tensor::{Graph, ParamSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{config_err, Result};
use crate::kbstore::{CandidateDictionary, EmbeddingStore};
use crate::nn::{Activation, Ffnn};
use crate::spans::Span;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingScheme {
    Uniform,
    Prior,
    Attention,
    AttPrior,
}

impl WeightingScheme {
    pub const ALL: [WeightingScheme; 4] = [
        WeightingScheme::Uniform,
        WeightingScheme::Prior,
        WeightingScheme::Attention,
        WeightingScheme::AttPrior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightingScheme::Uniform => "uniform",
            WeightingScheme::Prior => "prior",
            WeightingScheme::Attention => "attention",
            WeightingScheme::AttPrior => "attprior",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, WeightingScheme::Attention | WeightingScheme::AttPrior)
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightingScheme {
    type Err = crate::KbieError;

    fn from_str(s: &str) -> Result<Self> {
        WeightingScheme::ALL
            .into_iter()
            .find(|w| w.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| config_err(format!("unknown weighting scheme {s:?}; expected one of uniform, prior, attention, attprior")))
    }
}

/// Softmax computed exactly as the graph's segment softmax does.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Weights over one non-empty candidate list. `scores` are the attention
/// logits and are required by the attention schemes.
pub fn candidate_weights(
    scheme: WeightingScheme,
    priors: &[f64],
    scores: Option<&[f64]>,
    renormalize_prior: bool,
) -> Result<Vec<f64>> {
    let n = priors.len();
    if n == 0 {
        return Err(config_err("candidate_weights needs at least one candidate"));
    }
    Ok(match scheme {
        WeightingScheme::Uniform => vec![1.0 / n as f64; n],
        WeightingScheme::Prior if renormalize_prior => {
            let z: f64 = priors.iter().sum();
            priors.iter().map(|p| p / z).collect()
        }
        WeightingScheme::Prior => priors.to_vec(),
        WeightingScheme::Attention | WeightingScheme::AttPrior => {
            let s = scores.ok_or_else(|| config_err("attention weights need scores"))?;
            if s.len() != n {
                return Err(config_err("one attention score per candidate is required"));
            }
            softmax(s)
        }
    })
}

/// `sum_j alpha_j xi_j`, accumulated in entity-id order so that permuting
/// the candidates leaves the result bitwise unchanged. No candidates gives
/// the zero vector.
pub fn kb_repr(entities: &[&str], weights: &[f64], vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..entities.len()).collect();
    order.sort_by(|&a, &b| entities[a].cmp(entities[b]));
    let mut e = vec![0.0; dim];
    for j in order {
        for (o, x) in e.iter_mut().zip(vectors[j]) {
            *o += weights[j] * x;
        }
    }
    e
}

/// Dictionary candidates of one span with their stored vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedCandidate {
    pub entity: String,
    pub prior: f64,
    pub vector: Vec<f64>,
}

/// Candidates per span, sorted by entity id; the count of candidates
/// missing from the store (their vectors are zero).
pub fn resolve_candidates(
    doc: &Document,
    spans: &[Span],
    dictionary: &CandidateDictionary,
    store: &EmbeddingStore,
) -> (Vec<Vec<ResolvedCandidate>>, usize) {
    let mut missing = 0;
    let out = spans
        .iter()
        .map(|s| {
            let mut list: Vec<ResolvedCandidate> = dictionary
                .lookup(&doc.surface(s.start, s.end))
                .iter()
                .map(|c| ResolvedCandidate {
                    entity: c.entity.clone(),
                    prior: c.prior,
                    vector: match store.get(&c.entity) {
                        Some(v) => v.to_vec(),
                        None => {
                            missing += 1;
                            vec![0.0; store.dim()]
                        }
                    },
                })
                .collect();
            list.sort_by(|a, b| a.entity.cmp(&b.entity));
            list
        })
        .collect();
    (out, missing)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KbConfig {
    pub scheme: WeightingScheme,
    /// Rescale priors of a (possibly truncated) list to sum to one.
    pub renormalize_prior: bool,
    pub attention_hidden: usize,
    /// Training-time dropout on the span and entity inputs of the scorer.
    pub attention_dropout: f64,
}

impl Default for KbConfig {
    fn default() -> Self {
        KbConfig {
            scheme: WeightingScheme::AttPrior,
            renormalize_prior: true,
            attention_hidden: 32,
            attention_dropout: 0.3,
        }
    }
}

/// Output of the module on a set of spans.
pub struct KbOutput {
    /// `spans x dim`.
    pub e: Var,
    /// `candidates x 1` weights over all candidates, span by span.
    pub alpha: Option<Var>,
    /// Span index of each weight row.
    pub segments: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KbModule {
    pub cfg: KbConfig,
    pub dim: usize,
    pub attention: Option<Ffnn>,
}

impl KbModule {
    pub fn new(params: &mut ParamSet, cfg: &KbConfig, span_dim: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 {
            return Err(config_err("entity vectors must have positive dimension"));
        }
        if !(0.0..1.0).contains(&cfg.attention_dropout) {
            return Err(config_err("attention dropout must lie in [0, 1)"));
        }
        let attention = if cfg.scheme.is_attention() {
            let input = span_dim + dim + usize::from(cfg.scheme == WeightingScheme::AttPrior);
            let dims = if cfg.attention_hidden == 0 {
                vec![input, 1]
            } else {
                vec![input, cfg.attention_hidden, 1]
            };
            Some(Ffnn::new(params, "kb/attention", &dims, Activation::Relu, rng)?)
        } else {
            None
        };
        Ok(KbModule {
            cfg: cfg.clone(),
            dim,
            attention,
        })
    }

    /// Unnormalized attention scores for each candidate row.
    fn scores(&self, g: &mut Graph, params: &ParamSet, spans: Var, segments: &[usize], xi: Var, priors: &[f64]) -> Result<Var> {
        let ffnn = self.attention.as_ref().expect("attention schemes own a scorer");
        let gs = g.gather(spans, segments)?;
        let gs = g.dropout(gs, self.cfg.attention_dropout)?;
        let xi = g.dropout(xi, self.cfg.attention_dropout)?;
        let mut parts = vec![gs, xi];
        if self.cfg.scheme == WeightingScheme::AttPrior {
            parts.push(g.constant(Tensor::column(priors.to_vec())?));
        }
        let x = g.concat(&parts, 1)?;
        Ok(ffnn.forward(g, params, x)?)
    }

    /// `e` for every row of `spans`; rows without candidates get zeros.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, spans: Var, candidates: &[Vec<ResolvedCandidate>]) -> Result<KbOutput> {
        let k = candidates.len();
        let mut segments = Vec::new();
        let mut groups = Vec::new();
        let mut rows = Vec::new();
        let mut priors = Vec::new();
        for (i, list) in candidates.iter().enumerate() {
            let start = segments.len();
            for c in list {
                segments.push(i);
                rows.extend_from_slice(&c.vector);
                priors.push(c.prior);
            }
            if segments.len() > start {
                groups.push((start..segments.len()).collect::<Vec<_>>());
            }
        }
        if segments.is_empty() {
            return Ok(KbOutput {
                e: g.constant(Tensor::zeros(vec![k, self.dim])),
                alpha: None,
                segments,
            });
        }
        let xi = g.constant(Tensor::matrix(segments.len(), self.dim, rows)?);
        let alpha = if self.cfg.scheme.is_attention() {
            let phi = self.scores(g, params, spans, &segments, xi, &priors)?;
            g.segment_softmax(phi, &groups)?
        } else {
            let mut w = Vec::with_capacity(segments.len());
            for grp in &groups {
                let p: Vec<f64> = grp.iter().map(|&r| priors[r]).collect();
                w.extend(candidate_weights(self.cfg.scheme, &p, None, self.cfg.renormalize_prior)?);
            }
            g.constant(Tensor::column(w)?)
        };
        let weighted = g.mul(alpha, xi)?;
        let e = g.segment_sum(weighted, &segments, k)?;
        Ok(KbOutput {
            e,
            alpha: Some(alpha),
            segments,
        })
    }

    /// Weights per span, aligned with each candidate list.
    pub fn weights_of(g: &Graph, out: &KbOutput, candidates: &[Vec<ResolvedCandidate>]) -> Vec<Vec<f64>> {
        let mut per: Vec<Vec<f64>> = candidates.iter().map(|c| Vec::with_capacity(c.len())).collect();
        if let Some(a) = out.alpha {
            for (r, &s) in out.segments.iter().enumerate() {
                per[s].push(g.value(a).data()[r]);
            }
        }
        per
    }
}

/// Attention scores of one span over its candidates, outside a training
/// graph: `FFNN([g; xi_j])`, or `FFNN([g; xi_j; p_j])` for AttPrior.
pub fn attention_scores(
    ffnn: &Ffnn,
    params: &ParamSet,
    scheme: WeightingScheme,
    g: &[f64],
    vectors: &[&[f64]],
    priors: &[f64],
) -> Result<Vec<f64>> {
    if !scheme.is_attention() {
        return Err(config_err(format!("{scheme} has no attention scores")));
    }
    let rows: Vec<Vec<f64>> = vectors
        .iter()
        .zip(priors)
        .map(|(v, &p)| {
            let mut r = g.to_vec();
            r.extend_from_slice(v);
            if scheme == WeightingScheme::AttPrior {
                r.push(p);
            }
            r
        })
        .collect();
    if rows.is_empty() {
        return Ok(vec![]);
    }
    Ok(ffnn.eval_rows(params, &rows)?.into_iter().map(|r| r[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn scheme_names_round_trip() {
        for s in WeightingScheme::ALL {
            assert_eq!(s.as_str().parse::<WeightingScheme>().unwrap(), s);
        }
        let err = "softmax".parse::<WeightingScheme>().unwrap_err().to_string();
        assert!(err.contains("attprior"));
    }

    #[test]
    fn weight_examples() {
        let u = candidate_weights(WeightingScheme::Uniform, &[0.1; 4], None, true).unwrap();
        assert_eq!(u, vec![0.25; 4]);
        let p = candidate_weights(WeightingScheme::Prior, &[0.6, 0.2, 0.2], None, true).unwrap();
        assert!(p.iter().zip([0.6, 0.2, 0.2]).all(|(a, b)| (a - b).abs() < 1e-15));
        let a = candidate_weights(WeightingScheme::Attention, &[0.9, 0.1, 0.0], Some(&[2.5; 3]), true).unwrap();
        assert_eq!(a, vec![1.0 / 3.0; 3]);
        let raw = candidate_weights(WeightingScheme::Prior, &[0.3, 0.1], None, false).unwrap();
        assert_eq!(raw, vec![0.3, 0.1]);
        assert!(candidate_weights(WeightingScheme::Uniform, &[], None, true).is_err());
    }

    #[test]
    fn kb_repr_examples() {
        assert_eq!(kb_repr(&[], &[], &[], 3), vec![0.0; 3]);
        assert_eq!(kb_repr(&["a"], &[1.0], &[&[0.5, -2.0]], 2), vec![0.5, -2.0]);
        assert_eq!(kb_repr(&["a", "b"], &[0.7, 0.3], &[&[1.0, 0.0], &[0.0, 1.0]], 2), vec![0.7, 0.3]);
    }

    #[test]
    fn hand_set_scorer() {
        let mut params = ParamSet::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let f = Ffnn::new(&mut params, "a", &[3, 1], Activation::Relu, &mut rng).unwrap();
        // g = [1], xi_j in R^2: score = 0.5*g + 1*xi0 - 2*xi1 + 0.25.
        let (w, b) = f.layers[0];
        params.get_mut(w).data_mut().copy_from_slice(&[0.5, 1.0, -2.0]);
        params.get_mut(b).data_mut()[0] = 0.25;
        let s = attention_scores(&f, &params, WeightingScheme::Attention, &[1.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[0.5, 0.5]).unwrap();
        assert_eq!(s, vec![0.5 + 1.0 + 0.25, 0.5 - 2.0 + 0.25]);
    }
}
