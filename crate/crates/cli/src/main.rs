use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kbie::corpus::synthetic::{generate_synthetic, presets, SyntheticConfig};
use kbie::corpus::{entity_type_counts, load_corpus, save_corpus};
use kbie::experiment::{el_accuracy, run, sweep, weight_report, KbChoice, RunConfig, RunData};
use kbie::kbembed::{train_kb_graph, train_kb_text, GraphEmbedConfig, HyperCorpus, TextEmbedConfig, TripleSet};
use kbie::kbmodule::WeightingScheme;
use kbie::kbstore::{CandidateDictionary, DEFAULT_CANDIDATE_CAP};
use kbie::metrics::{add_slices, evaluate, FrequencyBucket};
use kbie::model::Model;
use kbie::{KbieError, Result};

#[derive(Parser)]
#[command(name = "kbie", version, about = "Joint entity, coreference and relation extraction with KB entity vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a candidate dictionary from the anchors of a hyperlinked corpus.
    BuildDict {
        #[arg(long)]
        hypercorpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CANDIDATE_CAP)]
        cap: usize,
    },
    /// Train entity vectors from text or from triples.
    TrainEmbeddings {
        #[arg(long, value_enum)]
        source: EmbedSource,
        #[arg(long)]
        hypercorpus: Option<PathBuf>,
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_source)]
        kb_source: Option<KbChoice>,
        /// Weighting scheme, or "none" for the baseline.
        #[arg(long, value_parser = parse_scheme_or_none)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint, or a prediction file, against a gold corpus.
    Evaluate {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training corpus whose type frequencies define the slices.
        #[arg(long, requires = "buckets")]
        train_corpus: Option<PathBuf>,
        /// Frequency buckets such as `0-50,51-`.
        #[arg(long, requires = "train_corpus", value_delimiter = ',', value_parser = parse_bucket)]
        buckets: Vec<FrequencyBucket>,
    },
    /// Write entity-centric predictions for a corpus.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score a grid of sources and schemes over several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_source, default_value = "none,kb-text,kb-graph,both")]
        sources: Vec<KbChoice>,
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme, default_value = "uniform,prior,attention,attprior")]
        schemes: Vec<WeightingScheme>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write candidate weights of every mention under several schemes.
    ReportWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus with its dictionary, hyperlinked pages and triples.
    Generate {
        #[arg(long, value_enum, required_unless_present = "config", conflicts_with = "config")]
        preset: Option<Preset>,
        /// Generator configuration in JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Training documents of the memorizable preset.
        #[arg(long, default_value_t = 20)]
        docs: usize,
        #[arg(long)]
        misleading: Option<usize>,
        #[arg(long)]
        benign: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedSource {
    Text,
    Graph,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Memorizable,
    KbSeparable,
}

#[derive(Clone, Copy)]
enum SchemeArg {
    None,
    Some(WeightingScheme),
}

fn parse_source(s: &str) -> std::result::Result<KbChoice, String> {
    s.parse().map_err(|e: KbieError| e.to_string())
}

fn parse_scheme(s: &str) -> std::result::Result<WeightingScheme, String> {
    s.parse().map_err(|e: KbieError| e.to_string())
}

fn parse_scheme_or_none(s: &str) -> std::result::Result<SchemeArg, String> {
    if s == "none" {
        return Ok(SchemeArg::None);
    }
    s.parse()
        .map(SchemeArg::Some)
        .map_err(|e: KbieError| format!("{e} (or none)"))
}

fn parse_bucket(s: &str) -> std::result::Result<FrequencyBucket, String> {
    let bad = || format!("bucket {s:?} is not of the form MIN-MAX or MIN-");
    let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
    let min = lo.trim().parse().map_err(|_| bad())?;
    let max = match hi.trim() {
        "" => None,
        h => Some(h.parse().map_err(|_| bad())?),
    };
    Ok(FrequencyBucket { min, max })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                KbieError::Numerics(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::BuildDict { hypercorpus, out, cap } => {
            let corpus = HyperCorpus::load(&hypercorpus)?;
            let dict = CandidateDictionary::build(corpus.anchor_stream(), cap)?;
            dict.save(&out)?;
            eprintln!("{} surfaces written to {}", dict.len(), out.display());
        }
        Command::TrainEmbeddings { source, hypercorpus, triples, out, seed, dim, epochs, lr } => {
            let store = match source {
                EmbedSource::Text => {
                    let path = hypercorpus.ok_or_else(|| usage("--source text needs --hypercorpus"))?;
                    let mut cfg = TextEmbedConfig { seed, ..Default::default() };
                    cfg.dim = dim.unwrap_or(cfg.dim);
                    cfg.epochs = epochs.unwrap_or(cfg.epochs);
                    cfg.lr = lr.unwrap_or(cfg.lr);
                    train_kb_text(&HyperCorpus::load(path)?, &cfg)?.store
                }
                EmbedSource::Graph => {
                    let path = triples.ok_or_else(|| usage("--source graph needs --triples"))?;
                    let mut cfg = GraphEmbedConfig { seed, ..Default::default() };
                    cfg.dim = dim.unwrap_or(cfg.dim);
                    cfg.epochs = epochs.unwrap_or(cfg.epochs);
                    cfg.lr = lr.unwrap_or(cfg.lr);
                    train_kb_graph(&TripleSet::load(path)?, &cfg)?.store
                }
            };
            store.save(&out)?;
            eprintln!("{} vectors of dimension {} written to {}", store.len(), store.dim(), out.display());
        }
        Command::Train { config, seed, kb_source, scheme, epochs, lr, output } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(k) = kb_source {
                cfg.kb_source = k;
            }
            match scheme {
                Some(SchemeArg::None) => cfg.scheme = None,
                Some(SchemeArg::Some(s)) => cfg.scheme = Some(s),
                None => {}
            }
            if let Some(e) = epochs {
                cfg.optimizer.epochs = e;
            }
            if let Some(l) = lr {
                cfg.optimizer.lr = l;
            }
            if output.is_some() {
                cfg.output = output;
            }
            cmd_train(&cfg)?;
        }
        Command::Evaluate { checkpoint, predictions, corpus, out, train_corpus, buckets } => {
            let (gold, _) = load_corpus(&corpus, None)?;
            let (pred, el) = match (checkpoint, predictions) {
                (Some(dir), _) => {
                    let model = Model::load(dir)?;
                    (model.predict_all(&gold)?, el_accuracy(&model, &gold)?)
                }
                (None, Some(p)) => (load_corpus(p, None)?.0, None),
                (None, None) => return Err(usage("--checkpoint or --predictions is required")),
            };
            let mut report = evaluate(&gold, &pred)?;
            report.el_top1 = el;
            if let Some(t) = train_corpus {
                let counts = entity_type_counts(&load_corpus(t, None)?.0);
                add_slices(&mut report, &gold, &pred, &counts, &buckets)?;
            }
            let json = serde_json::to_string_pretty(&report)?;
            emit(out.as_deref(), &json)?;
            eprint!("{}", report.to_table());
        }
        Command::Predict { checkpoint, corpus, out } => {
            let model = Model::load(checkpoint)?;
            let (docs, _) = load_corpus(&corpus, None)?;
            save_corpus(&model.predict_all(&docs)?, &out)?;
        }
        Command::Sweep { config, sources, schemes, seeds, out } => {
            let base = RunConfig::load(&config)?;
            base.optimizer.validate()?;
            let data = RunData::load(&base.data)?;
            let table = sweep(&base, &data, &sources, &schemes, &seeds, |k, s, seed, r| {
                let s = s.map_or("-", WeightingScheme::as_str);
                eprintln!("{k}/{s} seed {seed}: coref {:.4} ner {:.4} re {:.4}", r.coref_avg, r.ner_hard.f1, r.re_hard.f1);
            })?;
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&table)?)?;
            }
            print!("{}", table.to_table());
        }
        Command::ReportWeights { checkpoint, corpus, out } => {
            let model = Model::load(checkpoint)?;
            let (docs, _) = load_corpus(&corpus, None)?;
            fs::write(out, weight_report(&model, &docs)?)?;
        }
        Command::Generate { preset, config, seed, out, docs, misleading, benign } => {
            let cfg: SyntheticConfig = match (preset, config) {
                (_, Some(path)) => serde_json::from_slice(&fs::read(path)?)?,
                (Some(Preset::Memorizable), None) => presets::memorizable(docs),
                (Some(Preset::KbSeparable), None) => {
                    let mut opts = presets::SeparableOptions::default();
                    opts.misleading_per_type = misleading.unwrap_or(opts.misleading_per_type);
                    opts.benign_per_type = benign.unwrap_or(opts.benign_per_type);
                    presets::kb_separable(&opts)
                }
                (None, None) => return Err(usage("--preset or --config is required")),
            };
            cmd_generate(&cfg, seed, &out)?;
        }
    }
    Ok(())
}

fn usage(msg: &str) -> KbieError {
    KbieError::Config(msg.to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.check_paths()?;
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| usage("an output directory is required (config key output or --output)"))?;
    let data = RunData::load(&cfg.data)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let mut log = fs::File::create(out.join("train_log.jsonl"))?;
    let outcome = run(cfg, &data, |entry, _| {
        serde_json::to_writer(&mut log, entry)?;
        log.write_all(b"\n")?;
        eprintln!(
            "epoch {:>3} loss {:.4} ner {:.4} coref {:.4} re {:.4} pruner recall {:.3}",
            entry.epoch, entry.loss, entry.l_ner, entry.l_coref, entry.l_re, entry.pruner_recall
        );
        Ok(())
    })?;
    outcome.model.save(&out)?;
    if let Some(report) = outcome.test {
        fs::write(out.join("test_metrics.json"), serde_json::to_string_pretty(&report)?)?;
        eprint!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_generate(cfg: &SyntheticConfig, seed: u64, out: &Path) -> Result<()> {
    let corpus = generate_synthetic(cfg, seed)?;
    fs::create_dir_all(out)?;
    save_corpus(&corpus.train, out.join("train.jsonl"))?;
    save_corpus(&corpus.dev, out.join("dev.jsonl"))?;
    save_corpus(&corpus.test, out.join("test.jsonl"))?;
    corpus.dictionary.save(out.join("dictionary.jsonl"))?;
    corpus.hypercorpus.save(out.join("hypercorpus.jsonl"))?;
    corpus.triples.save(out.join("triples.tsv"))?;
    fs::write(out.join("generator.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}
