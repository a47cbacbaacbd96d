//! Seeded synthetic corpora with matching KB resources.
//!
//! A generator config lists entity types grouped by the sentence templates
//! they are rendered with, entities with surface forms, and relation facts.
//! Types that share a context group occur in identical token contexts, so
//! only the identity of the linked KB entity can tell them apart.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Document, GoldCluster, GoldMention, GoldRelation};
use crate::error::{config_err, Result};
use crate::kbembed::{Anchor, HyperCorpus, Page, Triple, TripleSet};
use crate::kbstore::{normalize_surface, CandidateDictionary, DEFAULT_CANDIDATE_CAP};
use crate::rng::substream;

/// Relation linking every entity to a hub node per type in the triple set.
pub const INSTANCE_OF: &str = "instance_of";

const SLOT: &str = "{}";
const HEAD_SLOT: &str = "{0}";
const TAIL_SLOT: &str = "{1}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextGroup {
    pub name: String,
    pub types: Vec<String>,
    /// Whitespace-separated tokens; the standalone token `{}` marks the
    /// mention.
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    /// Templates with standalone `{0}` (head) and `{1}` (tail) tokens.
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub text: String,
    /// Anchor occurrences in the hyperlinked corpus.
    #[serde(default = "one")]
    pub anchors: usize,
    /// Whether documents may use this surface.
    #[serde(default = "yes")]
    pub in_documents: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub id: String,
    pub types: Vec<String>,
    pub surfaces: Vec<SurfaceSpec>,
    /// Splits whose documents may mention the entity. Empty means the
    /// entity exists only in the KB resources.
    #[serde(default)]
    pub splits: Vec<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSpec {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub dev: usize,
    #[serde(default)]
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub context_groups: Vec<ContextGroup>,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub facts: Vec<FactSpec>,
    /// Words that fill hyperlinked-corpus pages, per entity type.
    pub description_words: BTreeMap<String, Vec<String>>,
    pub splits: SplitSizes,
    /// Inclusive range.
    pub entities_per_doc: [usize; 2],
    /// Inclusive range of single-entity sentences per document entity.
    pub mentions_per_entity: [usize; 2],
    #[serde(default)]
    pub kb_separable: bool,
    #[serde(default = "default_page_length")]
    pub page_length: usize,
}

fn default_page_length() -> usize {
    12
}

pub struct SyntheticCorpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub dictionary: CandidateDictionary,
    pub triples: TripleSet,
    pub hypercorpus: HyperCorpus,
}

impl SyntheticCorpus {
    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

fn tokens(template: &str) -> Vec<&str> {
    template.split_whitespace().collect()
}

impl SyntheticConfig {
    /// Group whose templates render mentions of `ty`.
    pub fn group_of(&self, ty: &str) -> Option<&ContextGroup> {
        self.context_groups.iter().find(|g| g.types.iter().any(|t| t == ty))
    }

    /// Types that share a context group with at least one other type.
    pub fn ambiguous_type_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        for g in &self.context_groups {
            for (i, a) in g.types.iter().enumerate() {
                for b in &g.types[i + 1..] {
                    pairs.push((a.clone(), b.clone()));
                }
            }
        }
        pairs
    }

    pub fn validate(&self) -> Result<()> {
        if self.entities_per_doc[0] == 0 || self.entities_per_doc[0] > self.entities_per_doc[1] {
            return Err(config_err("entities_per_doc must be a range [min, max] with min >= 1"));
        }
        if self.mentions_per_entity[0] == 0
            || self.mentions_per_entity[0] > self.mentions_per_entity[1]
        {
            return Err(config_err("mentions_per_entity must be a range [min, max] with min >= 1"));
        }
        if self.page_length == 0 {
            return Err(config_err("page_length must be positive"));
        }
        let mut seen_types = HashSet::new();
        let mut group_names = HashSet::new();
        for g in &self.context_groups {
            if !group_names.insert(g.name.as_str()) {
                return Err(config_err(format!("duplicate context group {}", g.name)));
            }
            if g.types.is_empty() || g.templates.is_empty() {
                return Err(config_err(format!("context group {} needs types and templates", g.name)));
            }
            for t in &g.types {
                if !seen_types.insert(t.as_str()) {
                    return Err(config_err(format!("type {t} is in two context groups")));
                }
                if self.description_words.get(t).map_or(true, Vec::is_empty) {
                    return Err(config_err(format!("type {t} has no description words")));
                }
            }
            for tpl in &g.templates {
                if tokens(tpl).iter().filter(|&&w| w == SLOT).count() != 1 {
                    return Err(config_err(format!("template {tpl:?} needs exactly one {SLOT}")));
                }
            }
        }
        let mut rel_names = HashSet::new();
        for r in &self.relations {
            if !rel_names.insert(r.name.as_str()) || r.name == INSTANCE_OF {
                return Err(config_err(format!("relation name {} is reserved or repeated", r.name)));
            }
            if r.templates.is_empty() {
                return Err(config_err(format!("relation {} has no templates", r.name)));
            }
            for tpl in &r.templates {
                let toks = tokens(tpl);
                let heads = toks.iter().filter(|&&w| w == HEAD_SLOT).count();
                let tails = toks.iter().filter(|&&w| w == TAIL_SLOT).count();
                if heads != 1 || tails != 1 {
                    return Err(config_err(format!(
                        "template {tpl:?} needs exactly one {HEAD_SLOT} and one {TAIL_SLOT}"
                    )));
                }
            }
        }
        let mut ids = HashSet::new();
        for e in &self.entities {
            if !ids.insert(e.id.as_str()) {
                return Err(config_err(format!("duplicate entity id {}", e.id)));
            }
            if e.types.is_empty() {
                return Err(config_err(format!("entity {} has no type", e.id)));
            }
            if let Some(t) = e.types.iter().find(|t| !seen_types.contains(t.as_str())) {
                return Err(config_err(format!("entity {} has type {t} outside every group", e.id)));
            }
            if e.surfaces.is_empty() || e.surfaces.iter().any(|s| normalize_surface(&s.text).is_empty()) {
                return Err(config_err(format!("entity {} needs non-empty surfaces", e.id)));
            }
            if !e.splits.is_empty() && !e.surfaces.iter().any(|s| s.in_documents) {
                return Err(config_err(format!("entity {} appears in documents but has no document surface", e.id)));
            }
        }
        let by_id: HashMap<&str, &EntitySpec> =
            self.entities.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut facts = HashSet::new();
        for f in &self.facts {
            for end in [&f.head, &f.tail] {
                if !by_id.contains_key(end.as_str()) {
                    return Err(config_err(format!("fact refers to unknown entity {end}")));
                }
            }
            if f.head == f.tail {
                return Err(config_err(format!("fact on {} relates the entity to itself", f.head)));
            }
            if !rel_names.contains(f.relation.as_str()) {
                return Err(config_err(format!("fact uses unknown relation {}", f.relation)));
            }
            if !facts.insert((&f.head, &f.relation, &f.tail)) {
                return Err(config_err("duplicate fact"));
            }
        }
        for (split, n) in [
            (Split::Train, self.splits.train),
            (Split::Dev, self.splits.dev),
            (Split::Test, self.splits.test),
        ] {
            if n > 0 && !self.entities.iter().any(|e| e.splits.contains(&split)) {
                return Err(config_err(format!("split {} has documents but no entities", split.as_str())));
            }
        }
        if self.kb_separable {
            let pairs = self.ambiguous_type_pairs();
            if pairs.is_empty() {
                return Err(config_err("kb_separable needs a context group with two or more types"));
            }
            let shared: HashSet<&str> = pairs
                .iter()
                .flat_map(|(a, b)| [a.as_str(), b.as_str()])
                .collect();
            // Relation templates would give those types distinct contexts.
            for f in &self.facts {
                for end in [&f.head, &f.tail] {
                    if by_id[end.as_str()].types.iter().any(|t| shared.contains(t.as_str())) {
                        return Err(config_err(format!(
                            "kb_separable: fact on {end} would give its shared-context type its own contexts"
                        )));
                    }
                }
            }
            for e in &self.entities {
                if !e.splits.is_empty() && e.types.len() > 1 && e.types.iter().any(|t| shared.contains(t.as_str())) {
                    return Err(config_err(format!(
                        "kb_separable: multi-type entity {} mixes a shared-context type", e.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact distribution of the `(two tokens left, two tokens right)` window
/// around a mention of `ty`, given that templates are drawn uniformly from
/// the type's group. `<s>` and `</s>` pad template edges.
pub fn context_distribution(cfg: &SyntheticConfig, ty: &str) -> BTreeMap<(String, String), f64> {
    let mut out = BTreeMap::new();
    let Some(g) = cfg.group_of(ty) else { return out };
    let p = 1.0 / g.templates.len() as f64;
    for tpl in &g.templates {
        let mut toks = vec!["<s>", "<s>"];
        toks.extend(tokens(tpl));
        toks.extend(["</s>", "</s>"]);
        let at = toks.iter().position(|&w| w == SLOT).expect("validated template");
        let key = (toks[at - 2..at].join(" "), toks[at + 1..at + 3].join(" "));
        *out.entry(key).or_insert(0.0) += p;
    }
    out
}

struct Sentence {
    tokens: Vec<String>,
    /// (start, end, entity index) within the sentence.
    mentions: Vec<(usize, usize, usize)>,
}

fn render(template: &str, fills: &[(&str, usize, &str)]) -> Sentence {
    let mut out = Sentence {
        tokens: Vec::new(),
        mentions: Vec::new(),
    };
    for w in tokens(template) {
        if let Some(&(_, entity, surface)) = fills.iter().find(|(slot, _, _)| *slot == w) {
            let start = out.tokens.len();
            out.tokens.extend(surface.split_whitespace().map(str::to_string));
            out.mentions.push((start, out.tokens.len() - 1, entity));
        } else {
            out.tokens.push(w.to_string());
        }
    }
    out
}

fn doc_surfaces(e: &EntitySpec) -> Vec<&str> {
    e.surfaces
        .iter()
        .filter(|s| s.in_documents)
        .map(|s| s.text.as_str())
        .collect()
}

fn generate_split(cfg: &SyntheticConfig, seed: u64, split: Split, count: usize) -> Vec<Document> {
    let pool: Vec<usize> = (0..cfg.entities.len())
        .filter(|&i| cfg.entities[i].splits.contains(&split))
        .collect();
    let mut docs = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = substream(seed, &format!("synthetic/{}/{k}", split.as_str()));
        let want = rng.gen_range(cfg.entities_per_doc[0]..=cfg.entities_per_doc[1]);
        let mut order = pool.clone();
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::new();
        let mut used: HashSet<String> = HashSet::new();
        for i in order {
            if chosen.len() == want {
                break;
            }
            let forms: Vec<String> = doc_surfaces(&cfg.entities[i])
                .into_iter()
                .map(normalize_surface)
                .collect();
            if forms.iter().any(|f| used.contains(f)) {
                continue;
            }
            used.extend(forms);
            chosen.push(i);
        }

        let mut sentences = Vec::new();
        for &i in &chosen {
            let e = &cfg.entities[i];
            let group = cfg.group_of(&e.types[0]).expect("validated type");
            let surfaces = doc_surfaces(e);
            let m = rng.gen_range(cfg.mentions_per_entity[0]..=cfg.mentions_per_entity[1]);
            for _ in 0..m {
                let tpl = group.templates.choose(&mut rng).expect("non-empty");
                let s = surfaces.choose(&mut rng).expect("non-empty");
                sentences.push(render(tpl, &[(SLOT, i, s)]));
            }
        }
        let present: HashSet<&str> = chosen.iter().map(|&i| cfg.entities[i].id.as_str()).collect();
        let index: HashMap<&str, usize> = chosen.iter().map(|&i| (cfg.entities[i].id.as_str(), i)).collect();
        let mut relations: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
        for f in &cfg.facts {
            if !(present.contains(f.head.as_str()) && present.contains(f.tail.as_str())) {
                continue;
            }
            let (h, t) = (index[f.head.as_str()], index[f.tail.as_str()]);
            let spec = cfg.relations.iter().find(|r| r.name == f.relation).expect("validated");
            let tpl = spec.templates.choose(&mut rng).expect("non-empty");
            let hs = doc_surfaces(&cfg.entities[h]);
            let ts = doc_surfaces(&cfg.entities[t]);
            let hs = hs.choose(&mut rng).expect("non-empty");
            let ts = ts.choose(&mut rng).expect("non-empty");
            sentences.push(render(tpl, &[(HEAD_SLOT, h, hs), (TAIL_SLOT, t, ts)]));
            relations.entry((h, t)).or_default().insert(f.relation.clone());
        }
        sentences.shuffle(&mut rng);

        let mut tokens = Vec::new();
        let mut mentions = Vec::new();
        for s in sentences {
            let off = tokens.len();
            for (a, b, ent) in s.mentions {
                mentions.push(GoldMention {
                    start: off + a,
                    end: off + b,
                    cluster: cfg.entities[ent].id.clone(),
                });
            }
            tokens.extend(s.tokens);
        }
        mentions.sort_by_key(|m| (m.start, m.end));
        let mut clusters: Vec<GoldCluster> = Vec::new();
        for m in &mentions {
            if !clusters.iter().any(|c| c.id == m.cluster) {
                let e = &cfg.entities[index[m.cluster.as_str()]];
                clusters.push(GoldCluster {
                    id: e.id.clone(),
                    types: e.types.iter().cloned().collect(),
                    link: Some(e.id.clone()),
                });
            }
        }
        let relations = relations
            .into_iter()
            .map(|((h, t), types)| GoldRelation {
                head: cfg.entities[h].id.clone(),
                tail: cfg.entities[t].id.clone(),
                types,
            })
            .collect();
        docs.push(Document {
            id: format!("{}-{k:04}", split.as_str()),
            tokens,
            mentions,
            clusters,
            relations,
        });
    }
    docs
}

fn generate_hypercorpus(cfg: &SyntheticConfig, seed: u64) -> HyperCorpus {
    let mut rng = substream(seed, "synthetic/hypercorpus");
    let mut pages: Vec<Page> = cfg
        .entities
        .iter()
        .map(|e| {
            let words = &cfg.description_words[&e.types[0]];
            Page {
                page_entity: e.id.clone(),
                tokens: (0..cfg.page_length)
                    .map(|_| words.choose(&mut rng).expect("non-empty").clone())
                    .collect(),
                anchors: Vec::new(),
            }
        })
        .collect();
    let mut hosts_by_type: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in cfg.entities.iter().enumerate() {
        hosts_by_type.entry(e.types[0].as_str()).or_default().push(i);
    }
    for (i, e) in cfg.entities.iter().enumerate() {
        let same = &hosts_by_type[e.types[0].as_str()];
        let others: Vec<usize> = same.iter().copied().filter(|&h| h != i).collect();
        let hosts = if others.is_empty() { vec![i] } else { others };
        for s in &e.surfaces {
            let words: Vec<String> = s.text.split_whitespace().map(str::to_string).collect();
            for _ in 0..s.anchors {
                let page = &mut pages[*hosts.choose(&mut rng).expect("non-empty")];
                // Gaps between tokens that do not split an existing anchor.
                let gaps: Vec<usize> = (0..=page.tokens.len())
                    .filter(|&p| !page.anchors.iter().any(|a| a.start < p && p <= a.end))
                    .collect();
                let at = *gaps.choose(&mut rng).expect("at least the end gap");
                for a in page.anchors.iter_mut().filter(|a| a.start >= at) {
                    a.start += words.len();
                    a.end += words.len();
                }
                page.tokens.splice(at..at, words.iter().cloned());
                page.anchors.push(Anchor {
                    start: at,
                    end: at + words.len() - 1,
                    entity: e.id.clone(),
                });
            }
        }
    }
    for p in pages.iter_mut() {
        p.anchors.sort_by_key(|a| a.start);
    }
    HyperCorpus { pages }
}

/// Deterministic corpus, dictionary, triples and hyperlinked corpus for
/// `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let train = generate_split(cfg, seed, Split::Train, cfg.splits.train);
    let dev = generate_split(cfg, seed, Split::Dev, cfg.splits.dev);
    let test = generate_split(cfg, seed, Split::Test, cfg.splits.test);
    let hypercorpus = generate_hypercorpus(cfg, seed);
    let dictionary = CandidateDictionary::build(hypercorpus.anchor_stream(), DEFAULT_CANDIDATE_CAP)?;
    let mut triples = Vec::new();
    for e in &cfg.entities {
        for t in &e.types {
            triples.push(Triple::new(e.id.clone(), INSTANCE_OF, format!("type:{t}")));
        }
    }
    for f in &cfg.facts {
        triples.push(Triple::new(f.head.clone(), f.relation.clone(), f.tail.clone()));
    }
    Ok(SyntheticCorpus {
        train,
        dev,
        test,
        dictionary,
        triples: TripleSet::new(triples)?,
        hypercorpus,
    })
}

/// Distinct capitalized pseudo-words built from consonant-vowel syllables.
pub fn pseudo_names(seed: u64, n: usize, avoid: &HashSet<String>) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut rng = substream(seed, "synthetic/names");
    let mut taken: HashSet<String> = avoid.iter().map(|w| w.to_lowercase()).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*C.choose(&mut rng).expect("non-empty") as char);
            w.push(*V.choose(&mut rng).expect("non-empty") as char);
        }
        if taken.insert(w.clone()) {
            let mut chars = w.chars();
            let first = chars.next().expect("non-empty").to_ascii_uppercase();
            out.push(std::iter::once(first).chain(chars).collect());
        }
    }
    out
}

pub mod presets {
    //! Ready-made generator configs.

    use super::*;

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|w| w.to_string()).collect()
    }

    fn vocabulary(cfg_words: &[&[&str]]) -> HashSet<String> {
        cfg_words.iter().flat_map(|l| l.iter().map(|w| w.to_string())).collect()
    }

    /// Small corpus a model can memorize: three types with their own
    /// contexts, unique names, repeated mentions and two relations.
    pub fn memorizable(train_docs: usize) -> SyntheticConfig {
        let person_t = ["{} smiled .", "later {} spoke .", "everyone met {} ."];
        let org_t = ["{} hired staff .", "the board of {} met .", "{} grew fast ."];
        let place_t = ["it rained in {} .", "{} is cold .", "we visited {} ."];
        let rel_works = ["{0} works for {1} .", "{1} employs {0} ."];
        let rel_based = ["{0} is based in {1} ."];
        let desc: [(&str, &[&str]); 3] = [
            ("person", &["born", "writer", "family", "career", "life"]),
            ("org", &["company", "founded", "business", "market", "shares"]),
            ("place", &["city", "river", "region", "north", "population"]),
        ];
        let avoid = vocabulary(&[&person_t, &org_t, &place_t, &rel_works, &rel_based]);
        let names = pseudo_names(11, 12, &avoid);
        let types = ["person", "org", "place"];
        let entities = names
            .iter()
            .enumerate()
            .map(|(i, n)| EntitySpec {
                id: format!("{}{}", types[i / 4], i % 4),
                types: vec![types[i / 4].to_string()],
                surfaces: vec![SurfaceSpec {
                    text: n.clone(),
                    anchors: 3,
                    in_documents: true,
                }],
                splits: vec![Split::Train],
            })
            .collect();
        let mut facts = Vec::new();
        for i in 0..4 {
            facts.push(FactSpec {
                head: format!("person{i}"),
                relation: "works_for".into(),
                tail: format!("org{}", i % 2),
            });
            facts.push(FactSpec {
                head: format!("org{i}"),
                relation: "based_in".into(),
                tail: format!("place{i}"),
            });
        }
        SyntheticConfig {
            context_groups: vec![
                ContextGroup {
                    name: "person".into(),
                    types: words(&["person"]),
                    templates: words(&person_t),
                },
                ContextGroup {
                    name: "org".into(),
                    types: words(&["org"]),
                    templates: words(&org_t),
                },
                ContextGroup {
                    name: "place".into(),
                    types: words(&["place"]),
                    templates: words(&place_t),
                },
            ],
            relations: vec![
                RelationSpec {
                    name: "works_for".into(),
                    templates: words(&rel_works),
                },
                RelationSpec {
                    name: "based_in".into(),
                    templates: words(&rel_based),
                },
            ],
            entities,
            facts,
            description_words: desc.iter().map(|(t, w)| (t.to_string(), words(w))).collect(),
            splits: SplitSizes {
                train: train_docs,
                dev: 0,
                test: 0,
            },
            entities_per_doc: [2, 3],
            mentions_per_entity: [1, 2],
            kb_separable: false,
            page_length: 8,
        }
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    pub struct SeparableOptions {
        pub splits: SplitSizes,
        pub train_entities_per_type: usize,
        pub test_entities_per_type: usize,
        /// Per type and split: surfaces whose most frequent link is a
        /// KB-only entity of a type from the other context group.
        pub misleading_per_type: usize,
        /// Per type and split: surfaces that also link to such an entity,
        /// but less often than to the right one.
        pub benign_per_type: usize,
        pub anchors: usize,
    }

    impl Default for SeparableOptions {
        fn default() -> Self {
            SeparableOptions {
                splits: SplitSizes {
                    train: 40,
                    dev: 0,
                    test: 20,
                },
                train_entities_per_type: 10,
                test_entities_per_type: 5,
                misleading_per_type: 2,
                benign_per_type: 2,
                anchors: 4,
            }
        }
    }

    /// Two context groups of two types each. Types in a group share every
    /// template; test entities never occur in training documents. Dev
    /// documents, when requested, reuse the test entities.
    pub fn kb_separable(opts: &SeparableOptions) -> SyntheticConfig {
        let g1_t = ["the {} arrived .", "we saw {} today .", "look at {} now .", "{} came back ."];
        let g2_t = ["{} was sold .", "they bought {} .", "a new {} appeared .", "check the {} price ."];
        let desc: [(&str, &[&str]); 4] = [
            ("alpha", &["forest", "leaf", "green", "moss", "fern", "tree", "bark", "root"]),
            ("beta", &["ocean", "wave", "salt", "tide", "reef", "shell", "coral", "foam"]),
            ("gamma", &["metal", "gear", "steel", "bolt", "wire", "iron", "rust", "valve"]),
            ("delta", &["paper", "ink", "page", "book", "letter", "print", "text", "quill"]),
        ];
        let types = ["alpha", "beta", "gamma", "delta"];
        let other_group = |t: usize| -> usize { if t < 2 { 2 + t } else { t - 2 } };
        let mut avoid = vocabulary(&[&g1_t, &g2_t]);
        for (_, w) in &desc {
            avoid.extend(w.iter().map(|x| x.to_string()));
        }
        let per_type = opts.train_entities_per_type + opts.test_entities_per_type;
        let names = pseudo_names(29, types.len() * per_type, &avoid);
        let mut entities = Vec::new();
        for (t, ty) in types.iter().enumerate() {
            for k in 0..per_type {
                let (split, local) = if k < opts.train_entities_per_type {
                    (Split::Train, k)
                } else {
                    (Split::Test, k - opts.train_entities_per_type)
                };
                let splits = match split {
                    Split::Train => vec![Split::Train],
                    _ if opts.splits.dev > 0 => vec![Split::Dev, Split::Test],
                    _ => vec![Split::Test],
                };
                let id = format!("{ty}_{}_{local}", split.as_str());
                let name = names[t * per_type + k].clone();
                entities.push(EntitySpec {
                    id: id.clone(),
                    types: vec![ty.to_string()],
                    surfaces: vec![SurfaceSpec {
                        text: name.clone(),
                        anchors: opts.anchors,
                        in_documents: true,
                    }],
                    splits,
                });
                // KB-only namesakes of a type the context rules out.
                let decoy_anchors = if local < opts.misleading_per_type {
                    Some(2 * opts.anchors)
                } else if local < opts.misleading_per_type + opts.benign_per_type {
                    Some((opts.anchors / 2).max(1))
                } else {
                    None
                };
                if let Some(anchors) = decoy_anchors {
                    entities.push(EntitySpec {
                        id: format!("{id}_namesake"),
                        types: vec![types[other_group(t)].to_string()],
                        surfaces: vec![SurfaceSpec {
                            text: name,
                            anchors,
                            in_documents: false,
                        }],
                        splits: vec![],
                    });
                }
            }
        }
        SyntheticConfig {
            context_groups: vec![
                ContextGroup {
                    name: "g1".into(),
                    types: words(&["alpha", "beta"]),
                    templates: words(&g1_t),
                },
                ContextGroup {
                    name: "g2".into(),
                    types: words(&["gamma", "delta"]),
                    templates: words(&g2_t),
                },
            ],
            relations: vec![],
            entities,
            facts: vec![],
            description_words: desc.iter().map(|(t, w)| (t.to_string(), words(w))).collect(),
            splits: opts.splits,
            entities_per_doc: [2, 4],
            mentions_per_entity: [1, 1],
            kb_separable: true,
            page_length: 10,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use crate::corpus::write_corpus;

    fn bytes(c: &SyntheticCorpus) -> Vec<u8> {
        let mut out = Vec::new();
        for split in [&c.train, &c.dev, &c.test] {
            write_corpus(split, &mut out).unwrap();
        }
        out.extend(c.dictionary.to_bytes());
        c.triples.write(&mut out).unwrap();
        c.hypercorpus.write(&mut out).unwrap();
        out
    }

    #[test]
    fn zero_documents_gives_empty_corpus() {
        let cfg = memorizable(0);
        let c = generate_synthetic(&cfg, 1).unwrap();
        assert!(c.train.is_empty() && c.dev.is_empty() && c.test.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = kb_separable(&SeparableOptions::default());
        let a = generate_synthetic(&cfg, 5).unwrap();
        let b = generate_synthetic(&cfg, 5).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate_synthetic(&cfg, 6).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn generated_documents_validate() {
        for cfg in [memorizable(20), kb_separable(&SeparableOptions::default())] {
            let c = generate_synthetic(&cfg, 3).unwrap();
            for d in c.train.iter().chain(&c.test) {
                d.validate(None, false).unwrap();
                for cl in &d.clusters {
                    let link = cl.link.as_deref().unwrap();
                    let m = d.mentions.iter().find(|m| m.cluster == cl.id).unwrap();
                    let cands = c.dictionary.lookup(&d.surface(m.start, m.end));
                    assert!(cands.iter().any(|x| x.entity == link));
                }
            }
            c.hypercorpus.validate().unwrap();
        }
    }

    #[test]
    fn misleading_surfaces_rank_the_namesake_first() {
        let cfg = kb_separable(&SeparableOptions::default());
        let c = generate_synthetic(&cfg, 0).unwrap();
        let e = cfg.entities.iter().find(|e| e.id == "alpha_train_0").unwrap();
        let list = c.dictionary.lookup(&e.surfaces[0].text);
        assert_eq!(list[0].entity, "alpha_train_0_namesake");
        assert_eq!(list[1].entity, "alpha_train_0");
        let e = cfg.entities.iter().find(|e| e.id == "alpha_train_2").unwrap();
        assert_eq!(c.dictionary.lookup(&e.surfaces[0].text)[0].entity, "alpha_train_2");
    }

    #[test]
    fn test_entities_are_unseen_in_training() {
        let c = generate_synthetic(&kb_separable(&SeparableOptions::default()), 2).unwrap();
        let train: HashSet<&str> = c.train.iter().flat_map(|d| d.clusters.iter().map(|c| c.id.as_str())).collect();
        assert!(c.test.iter().flat_map(|d| &d.clusters).all(|cl| !train.contains(cl.id.as_str())));
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let mut cfg = memorizable(5);
        cfg.entities[0].types = vec!["robot".into()];
        assert!(generate_synthetic(&cfg, 0).is_err());
        let mut cfg = memorizable(5);
        cfg.context_groups[0].templates.push("no slot here".into());
        assert!(cfg.validate().is_err());
        let mut cfg = memorizable(5);
        cfg.kb_separable = true;
        assert!(cfg.validate().is_err());
        let mut cfg = memorizable(5);
        cfg.entities_per_doc = [3, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = kb_separable(&SeparableOptions::default());
        cfg.relations.push(RelationSpec {
            name: "r".into(),
            templates: vec!["{0} r {1}".into()],
        });
        cfg.facts.push(FactSpec {
            head: "alpha_train_0".into(),
            relation: "r".into(),
            tail: "beta_train_0".into(),
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = kb_separable(&SeparableOptions::default());
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SyntheticConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
