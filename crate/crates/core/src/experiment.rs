//! Run configurations, single training runs, seed sweeps and candidate
//! weight reports.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Document, LabelVocab};
use crate::encoder::{read_word_vectors, EncoderConfig, TokenVocab};
use crate::error::{config_err, KbieError, Result};
use crate::heads::HeadConfig;
use crate::kbmodule::{KbConfig, WeightingScheme};
use crate::kbstore::{combine_stores, CandidateDictionary, EmbeddingStore, KbSource};
use crate::metrics::{el_top1_accuracy, evaluate, MetricsReport};
use crate::model::{KbResources, Model, ModelConfig};
use crate::spans::Span;
use crate::train::{train, EpochLog, TrainConfig};

/// Knowledge-base axis of an experiment, including the baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KbChoice {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "kb-text")]
    Text,
    #[serde(rename = "kb-graph")]
    Graph,
    #[serde(rename = "both")]
    Both,
}

impl KbChoice {
    pub const ALL: [KbChoice; 4] = [KbChoice::None, KbChoice::Text, KbChoice::Graph, KbChoice::Both];

    pub fn source(self) -> Option<KbSource> {
        match self {
            KbChoice::None => None,
            KbChoice::Text => Some(KbSource::Text),
            KbChoice::Graph => Some(KbSource::Graph),
            KbChoice::Both => Some(KbSource::Both),
        }
    }

    pub fn as_str(self) -> &'static str {
        self.source().map_or("none", KbSource::as_str)
    }
}

impl fmt::Display for KbChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KbChoice {
    type Err = KbieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(KbChoice::None),
            "kb-text" | "text" => Ok(KbChoice::Text),
            "kb-graph" | "graph" => Ok(KbChoice::Graph),
            "both" => Ok(KbChoice::Both),
            _ => Err(config_err(format!(
                "unknown KB source {s:?}; expected one of none, kb-text, kb-graph, both"
            ))),
        }
    }
}

/// Input files of a run. Relative paths are resolved against the directory
/// of the configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub text_store: Option<PathBuf>,
    pub graph_store: Option<PathBuf>,
    /// Whitespace-separated `word v1 v2 ...` lines.
    pub word_vectors: Option<PathBuf>,
}

/// Settings of the knowledge-base module other than the scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbOptions {
    pub renormalize_prior: bool,
    pub attention_hidden: usize,
    pub attention_dropout: f64,
}

impl Default for KbOptions {
    fn default() -> Self {
        let k = KbConfig::default();
        KbOptions {
            renormalize_prior: k.renormalize_prior,
            attention_hidden: k.attention_hidden,
            attention_dropout: k.attention_dropout,
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub kb_source: KbChoice,
    #[serde(default)]
    pub scheme: Option<WeightingScheme>,
    #[serde(default)]
    pub kb: KbOptions,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub spans: crate::spans::SpanConfig,
    #[serde(default)]
    pub heads: HeadConfig,
    #[serde(default = "default_pruner_hidden")]
    pub pruner_hidden: usize,
    #[serde(default)]
    pub optimizer: TrainConfig,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_pruner_hidden() -> usize {
    ModelConfig::default().pruner_hidden
}

impl RunConfig {
    pub fn new(kb_source: KbChoice, scheme: Option<WeightingScheme>, seed: u64) -> Self {
        RunConfig {
            data: DataPaths::default(),
            kb_source,
            scheme,
            kb: KbOptions::default(),
            encoder: EncoderConfig::default(),
            spans: Default::default(),
            heads: HeadConfig::default(),
            pruner_hidden: default_pruner_hidden(),
            optimizer: TrainConfig::default(),
            seed,
            output: None,
        }
    }

    /// Parse a JSON configuration and resolve its paths relative to `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = serde_json::from_slice(&fs::read(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.train,
            &mut d.dev,
            &mut d.test,
            &mut d.dictionary,
            &mut d.text_store,
            &mut d.graph_store,
            &mut d.word_vectors,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = &mut self.output {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
    }

    /// Checks the source/scheme pairing and the optimizer settings.
    pub fn validate(&self) -> Result<()> {
        match (self.kb_source, self.scheme) {
            (KbChoice::None, Some(s)) => {
                return Err(config_err(format!(
                    "the baseline (kb_source none) takes no weighting scheme, got {s}"
                )))
            }
            (k, None) if k != KbChoice::None => {
                return Err(config_err(format!(
                    "kb_source {k} needs a weighting scheme (uniform, prior, attention or attprior)"
                )))
            }
            _ => {}
        }
        self.optimizer.validate()?;
        self.encoder.validate()?;
        self.spans.validate()?;
        self.heads.loss_weights.validate()
    }

    /// Checks that every referenced file exists and that the resources
    /// needed by the knowledge-base source are given.
    pub fn check_paths(&self) -> Result<()> {
        let d = &self.data;
        if d.train.is_none() {
            return Err(config_err("data.train is required"));
        }
        if self.kb_source != KbChoice::None && d.dictionary.is_none() {
            return Err(config_err("a knowledge-base source needs data.dictionary"));
        }
        if matches!(self.kb_source, KbChoice::Text | KbChoice::Both) && d.text_store.is_none() {
            return Err(config_err(format!("kb_source {} needs data.text_store", self.kb_source)));
        }
        if matches!(self.kb_source, KbChoice::Graph | KbChoice::Both) && d.graph_store.is_none() {
            return Err(config_err(format!("kb_source {} needs data.graph_store", self.kb_source)));
        }
        for p in [
            &d.train,
            &d.dev,
            &d.test,
            &d.dictionary,
            &d.text_store,
            &d.graph_store,
            &d.word_vectors,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(KbieError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} does not exist", p.display()),
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            spans: self.spans.clone(),
            kb: self.scheme.map(|scheme| KbConfig {
                scheme,
                renormalize_prior: self.kb.renormalize_prior,
                attention_hidden: self.kb.attention_hidden,
                attention_dropout: self.kb.attention_dropout,
            }),
            heads: self.heads.clone(),
            pruner_hidden: self.pruner_hidden,
        }
    }
}

/// Corpora and knowledge-base resources held in memory.
#[derive(Clone, Debug, Default)]
pub struct RunData {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub dictionary: Option<CandidateDictionary>,
    pub text_store: Option<EmbeddingStore>,
    pub graph_store: Option<EmbeddingStore>,
    pub word_vectors: Option<HashMap<String, Vec<f64>>>,
}

impl RunData {
    pub fn load(paths: &DataPaths) -> Result<Self> {
        let corpus = |p: &Option<PathBuf>| -> Result<Vec<Document>> {
            match p {
                Some(p) => Ok(load_corpus(p, None)?.0),
                None => Ok(vec![]),
            }
        };
        let store = |p: &Option<PathBuf>| p.as_ref().map(EmbeddingStore::load).transpose();
        Ok(RunData {
            train: corpus(&paths.train)?,
            dev: corpus(&paths.dev)?,
            test: corpus(&paths.test)?,
            dictionary: paths.dictionary.as_ref().map(CandidateDictionary::load).transpose()?,
            text_store: store(&paths.text_store)?,
            graph_store: store(&paths.graph_store)?,
            word_vectors: paths.word_vectors.as_ref().map(read_word_vectors).transpose()?,
        })
    }

    /// Dictionary and entity vectors for `choice`; `None` for the baseline.
    pub fn resources(&self, choice: KbChoice) -> Result<Option<KbResources>> {
        if choice == KbChoice::None {
            return Ok(None);
        }
        let dictionary = self
            .dictionary
            .clone()
            .ok_or_else(|| config_err("knowledge-base runs need a candidate dictionary"))?;
        let text = self.text_store.as_ref();
        let graph = self.graph_store.as_ref();
        let missing = |name: &str| config_err(format!("kb_source {choice} needs a {name} store"));
        let store = match choice {
            KbChoice::Text => text.ok_or_else(|| missing("text"))?.clone(),
            KbChoice::Graph => graph.ok_or_else(|| missing("graph"))?.clone(),
            KbChoice::Both => combine_stores(text.ok_or_else(|| missing("text"))?, graph.ok_or_else(|| missing("graph"))?)?,
            KbChoice::None => unreachable!(),
        };
        Ok(Some(KbResources { dictionary, store }))
    }
}

pub struct RunOutcome {
    pub model: Model,
    pub logs: Vec<EpochLog>,
    /// Scores on the test documents, when there are any.
    pub test: Option<MetricsReport>,
}

/// Train one configuration on `data` and score it on the test split.
pub fn run(
    cfg: &RunConfig,
    data: &RunData,
    on_epoch: impl FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let vocab = TokenVocab::build(&data.train, cfg.encoder.lowercase);
    let labels = LabelVocab::from_documents(&data.train);
    let resources = data.resources(cfg.kb_source)?;
    let mut model = Model::new(
        &cfg.model_config(),
        vocab,
        labels,
        resources,
        data.word_vectors.as_ref(),
        cfg.seed,
    )?;
    let logs = train(&mut model, &data.train, &data.dev, &cfg.optimizer, on_epoch)?;
    let test = if data.test.is_empty() {
        None
    } else {
        Some(score(&model, &data.test)?)
    };
    Ok(RunOutcome { model, logs, test })
}

/// Metrics of `model` on `docs`, with entity-linking accuracy for
/// knowledge-base models when any gold cluster carries a link.
pub fn score(model: &Model, docs: &[Document]) -> Result<MetricsReport> {
    let mut report = evaluate(docs, &model.predict_all(docs)?)?;
    report.el_top1 = el_accuracy(model, docs)?;
    Ok(report)
}

/// Top-1 linking accuracy of the model's own weights over gold-linked
/// mentions; `None` for the baseline or without linked mentions.
pub fn el_accuracy(model: &Model, docs: &[Document]) -> Result<Option<f64>> {
    let Some(scheme) = model.scheme() else {
        return Ok(None);
    };
    let mut items = Vec::new();
    for d in docs {
        items.extend(model.el_items(d, scheme)?);
    }
    Ok((!items.is_empty()).then(|| el_top1_accuracy(&items)))
}

/// Mean and sample standard deviation; the deviation is absent for a
/// single value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat { mean: 0.0, std: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Stat { mean, std }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * s),
            None => write!(f, "{:.2}", 100.0 * self.mean),
        }
    }
}

/// One configuration of a sweep, aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kb_source: KbChoice,
    pub scheme: Option<WeightingScheme>,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    pub coref: Stat,
    pub ner: Stat,
    pub re: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub el: Option<Stat>,
}

impl SweepRow {
    pub fn new(kb_source: KbChoice, scheme: Option<WeightingScheme>, seeds: Vec<u64>, runs: Vec<MetricsReport>) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        let el: Vec<f64> = runs.iter().filter_map(|r| r.el_top1).collect();
        SweepRow {
            kb_source,
            scheme,
            coref: col(|r| r.coref_avg),
            ner: col(|r| r.ner_hard.f1),
            re: col(|r| r.re_hard.f1),
            el: (!el.is_empty() && el.len() == runs.len()).then(|| Stat::of(&el)),
            seeds,
            runs,
        }
    }

    pub fn label(&self) -> String {
        match self.scheme {
            Some(s) => format!("{}/{}", self.kb_source, s),
            None => self.kb_source.to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, kb_source: KbChoice, scheme: Option<WeightingScheme>) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.kb_source == kb_source && r.scheme == scheme)
    }

    /// Rows grouped by knowledge-base source, scores in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<10} {:>16} {:>16} {:>16} {:>16}",
            "kb", "scheme", "coref", "ner", "re", "el"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:<10} {:>16} {:>16} {:>16} {:>16}",
                r.kb_source.as_str(),
                r.scheme.map_or("-", WeightingScheme::as_str),
                r.coref.to_string(),
                r.ner.to_string(),
                r.re.to_string(),
                r.el.map_or("-".to_string(), |s| s.to_string()),
            );
        }
        out
    }
}

/// The (source, scheme) cells of a grid; the baseline contributes a single
/// cell without a scheme.
pub fn grid(sources: &[KbChoice], schemes: &[WeightingScheme]) -> Vec<(KbChoice, Option<WeightingScheme>)> {
    let mut cells = Vec::new();
    for &k in sources {
        if k == KbChoice::None {
            cells.push((k, None));
        } else {
            cells.extend(schemes.iter().map(|&s| (k, Some(s))));
        }
    }
    cells
}

/// Train and score every grid cell under every seed. `base` supplies all
/// settings other than the source, scheme and seed.
pub fn sweep(
    base: &RunConfig,
    data: &RunData,
    sources: &[KbChoice],
    schemes: &[WeightingScheme],
    seeds: &[u64],
    mut progress: impl FnMut(KbChoice, Option<WeightingScheme>, u64, &MetricsReport),
) -> Result<SweepTable> {
    if seeds.is_empty() {
        return Err(config_err("a sweep needs at least one seed"));
    }
    if data.test.is_empty() {
        return Err(config_err("a sweep needs test documents"));
    }
    let mut rows = Vec::new();
    for (k, s) in grid(sources, schemes) {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig {
                kb_source: k,
                scheme: s,
                seed,
                ..base.clone()
            };
            let report = run(&cfg, data, |_, _| Ok(()))?.test.expect("test split is non-empty");
            progress(k, s, seed, &report);
            runs.push(report);
        }
        rows.push(SweepRow::new(k, s, seeds.to_vec(), runs));
    }
    Ok(SweepTable { rows })
}

/// Schemes shown in a weight report: uniform, prior and the model's own.
pub fn report_schemes(model: &Model) -> Vec<WeightingScheme> {
    let mut out = vec![WeightingScheme::Uniform, WeightingScheme::Prior];
    if let Some(s) = model.scheme() {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Candidate weights per span as text. Each block starts with
/// `# doc<TAB>start<TAB>end<TAB>scheme` and lists
/// `surface<TAB>entity<TAB>prior<TAB>alpha` rows by decreasing weight.
/// Gold mentions are reported; documents without any use the model's kept
/// spans. Spans without candidates are skipped.
pub fn weight_report(model: &Model, docs: &[Document]) -> Result<String> {
    if model.resources.is_none() {
        return Err(config_err("the baseline model has no candidate weights"));
    }
    let schemes = report_schemes(model);
    let mut out = String::new();
    for doc in docs {
        if doc.tokens.is_empty() {
            continue;
        }
        let spans = report_spans(model, doc)?;
        let per_scheme: Vec<Vec<Vec<(String, f64, f64)>>> = schemes
            .iter()
            .map(|&s| model.span_weights(doc, &spans, s))
            .collect::<Result<_>>()?;
        for (i, span) in spans.iter().enumerate() {
            if per_scheme[0][i].is_empty() {
                continue;
            }
            let surface = doc.surface(span.start, span.end);
            for (s, weights) in schemes.iter().zip(&per_scheme) {
                let mut rows = weights[i].clone();
                rows.sort_by(|a, b| b.2.total_cmp(&a.2));
                let _ = writeln!(out, "# {}\t{}\t{}\t{}", doc.id, span.start, span.end, s);
                for (entity, prior, alpha) in rows {
                    let _ = writeln!(out, "{surface}\t{entity}\t{prior}\t{alpha}");
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn report_spans(model: &Model, doc: &Document) -> Result<Vec<Span>> {
    let mut spans: Vec<Span> = doc.mentions.iter().map(|m| Span::new(m.start, m.end)).collect();
    if spans.is_empty() {
        let mut g = kbie_tensor::Graph::new();
        spans = model.forward(&mut g, &model.params, doc, None)?.kept;
    }
    spans.sort_by_key(|s| (s.start, s.end));
    spans.dedup();
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_and_source_must_agree() {
        assert!(RunConfig::new(KbChoice::None, None, 1).validate().is_ok());
        assert!(RunConfig::new(KbChoice::Both, Some(WeightingScheme::AttPrior), 1).validate().is_ok());
        assert!(RunConfig::new(KbChoice::None, Some(WeightingScheme::Prior), 1).validate().is_err());
        assert!(RunConfig::new(KbChoice::Text, None, 1).validate().is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let err = serde_json::from_str::<RunConfig>(r#"{"kb_source": "none"}"#).unwrap_err();
        assert!(err.to_string().contains("seed"));
        let cfg: RunConfig = serde_json::from_str(r#"{"kb_source": "kb-graph", "scheme": "prior", "seed": 4}"#).unwrap();
        assert_eq!(cfg.kb_source, KbChoice::Graph);
        assert_eq!(cfg.model_config().kb.unwrap().scheme, WeightingScheme::Prior);
    }

    #[test]
    fn unknown_scheme_lists_allowed_values() {
        let err = serde_json::from_str::<RunConfig>(r#"{"kb_source": "both", "scheme": "max", "seed": 1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("attprior"), "{err}");
    }

    #[test]
    fn grid_has_thirteen_cells() {
        assert_eq!(grid(&KbChoice::ALL, &WeightingScheme::ALL).len(), 13);
        assert_eq!(grid(&[KbChoice::None], &WeightingScheme::ALL), vec![(KbChoice::None, None)]);
    }

    #[test]
    fn sample_standard_deviation() {
        let s = Stat::of(&[0.5]);
        assert_eq!((s.mean, s.std), (0.5, None));
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, Some(1.0));
        assert_eq!(s.to_string(), "200.00 ± 100.00");
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = RunConfig::new(KbChoice::None, None, 1);
        cfg.data.train = Some("train.jsonl".into());
        cfg.data.test = Some("/abs/test.jsonl".into());
        cfg.resolve_paths(Path::new("/runs/a"));
        assert_eq!(cfg.data.train.unwrap(), Path::new("/runs/a/train.jsonl"));
        assert_eq!(cfg.data.test.unwrap(), Path::new("/abs/test.jsonl"));
    }
}
