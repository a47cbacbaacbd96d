#![allow(dead_code)]

use std::collections::BTreeSet;

use kbie::corpus::{Document, GoldCluster, GoldMention, GoldRelation, LabelVocab};
use kbie::encoder::{EncoderConfig, TokenVocab};
use kbie::heads::{HeadConfig, LossWeights};
use kbie::kbmodule::{KbConfig, WeightingScheme};
use kbie::kbstore::{CandidateDictionary, CandidateEntity, EmbeddingStore, KbSource};
use kbie::model::{KbResources, Model, ModelConfig};
use kbie::nn::Activation;
use kbie::spans::SpanConfig;

fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Four tokens, two entities, one relation, every mention single-token.
pub fn micro_doc() -> Document {
    let m = |start, cluster: &str| GoldMention {
        start,
        end: start,
        cluster: cluster.into(),
    };
    Document {
        id: "micro".into(),
        tokens: ["Ada", "met", "Bob", "Ada"].iter().map(|s| s.to_string()).collect(),
        mentions: vec![m(0, "a"), m(2, "b"), m(3, "a")],
        clusters: vec![
            GoldCluster {
                id: "a".into(),
                types: set(&["per"]),
                link: Some("ada_1".into()),
            },
            GoldCluster {
                id: "b".into(),
                types: set(&["per", "org"]),
                link: None,
            },
        ],
        relations: vec![GoldRelation {
            head: "a".into(),
            tail: "b".into(),
            types: set(&["knows"]),
        }],
    }
}

pub fn micro_resources() -> KbResources {
    let mut dictionary = CandidateDictionary::new();
    let c = |e: &str, p| CandidateEntity {
        entity: e.into(),
        prior: p,
    };
    dictionary.insert("ada", vec![c("ada_1", 0.6), c("ada_2", 0.3)]).unwrap();
    dictionary.insert("bob", vec![c("bob_1", 1.0)]).unwrap();
    let mut store = EmbeddingStore::new(KbSource::Text, 3).unwrap();
    store.insert("ada_1", &[0.5, -0.2, 0.1]).unwrap();
    store.insert("ada_2", &[-0.3, 0.4, 0.2]).unwrap();
    store.insert("bob_1", &[0.1, 0.1, -0.6]).unwrap();
    KbResources { dictionary, store }
}

/// Small dimensions, tanh heads, no dropout, every span kept.
pub fn tiny_config(scheme: Option<WeightingScheme>) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            word_dim: 3,
            char_dim: 2,
            char_filters: 2,
            char_widths: vec![2],
            hidden: 3,
            dropout: 0.0,
            word_dropout: 0.0,
            lowercase: true,
            freeze_words: false,
        },
        spans: SpanConfig {
            max_width: 1,
            width_dim: 2,
            keep_ratio: 1.0,
        },
        kb: scheme.map(|scheme| KbConfig {
            scheme,
            attention_hidden: 3,
            attention_dropout: 0.0,
            ..KbConfig::default()
        }),
        heads: HeadConfig {
            hidden: 4,
            activation: Activation::Tanh,
            loss_weights: LossWeights {
                ner: 1.0,
                coref: 1.0,
                re: 1.0,
            },
        },
        pruner_hidden: 3,
    }
}

pub fn micro_model(scheme: Option<WeightingScheme>, seed: u64) -> Model {
    let doc = micro_doc();
    let docs = [doc];
    let vocab = TokenVocab::build(&docs, true);
    let labels = LabelVocab::from_documents(&docs);
    let res = scheme.map(|_| micro_resources());
    Model::new(&tiny_config(scheme), vocab, labels, res, None, seed).unwrap()
}
