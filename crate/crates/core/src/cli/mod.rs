//! Command-line surface: synth, ingest, train, eval, predict, simplify, report.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::ingest::{
    fit_token_embeddings, load_corpus_jsonl, load_graph_json, to_labeled_graph, token_corpus, write_corpus_jsonl,
    RawGraphRecord, TokenEmbedder,
};
use crate::metrics::{buckets_to_csv, bucketed_accuracy, compute_metrics, export_embeddings, BucketRow, Metrics};
use crate::sapool::refine_graph;
use crate::synth::generate_records;
use crate::trainer::{self, predict_all, split_indices, train, with_jobs, Checkpoint, Model};

#[derive(Debug, Parser)]
#[command(name = "vulngraph", version, about = "Hierarchical graph learning for vulnerability classification")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    NoHgr,
    NoGnn,
    NoGt,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.batch_size=64`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub seed_data: Option<u64>,
    #[arg(long, global = true)]
    pub seed_model: Option<u64>,
    #[arg(long, global = true)]
    pub seed_train: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, global = true, value_enum)]
    pub ablation: Option<AblationArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic JSON-lines corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a corpus and fit the token embedder.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json, history.csv, resolved_config.json.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Embedder produced by `ingest`; fitted on the training split otherwise.
        #[arg(long)]
        embedder: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes metrics.json, buckets.csv, embeddings.tsv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one graph JSON file; prints a JSON line.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
    },
    /// Run refinement alone; writes simplified.json and trace.json.
    Simplify {
        /// Trained checkpoint; freshly initialized parameters otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a text summary of an eval output directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Config file, then `--set`, then the dedicated seed and ablation flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut sets = common.sets.clone();
    if let Some(s) = common.seed_data {
        sets.push(format!("seeds.data={s}"));
        sets.push(format!("synth.seed={s}"));
    }
    if let Some(s) = common.seed_model {
        sets.push(format!("seeds.model={s}"));
    }
    if let Some(s) = common.seed_train {
        sets.push(format!("seeds.train={s}"));
    }
    match common.ablation {
        Some(AblationArg::NoHgr) => sets.push("train.ablation.use_hgr=false".into()),
        Some(AblationArg::NoGnn) => sets.push("train.ablation.use_gnn=false".into()),
        Some(AblationArg::NoGt) => sets.push("train.ablation.use_gt=false".into()),
        None => {}
    }
    base.with_overrides(&sets)
}

fn load_records(path: &Path) -> Result<Vec<RawGraphRecord>> {
    let recs = load_corpus_jsonl(&read(path)?)?;
    if recs.is_empty() {
        return Err(Error::input(format!("corpus {} holds no graphs", path.display())));
    }
    Ok(recs)
}

fn embed_all(recs: &[RawGraphRecord], emb: &TokenEmbedder) -> Result<Vec<LabeledGraph>> {
    recs.iter().map(|r| to_labeled_graph(r, emb)).collect()
}

fn fit_embedder(cfg: &RunConfig, recs: &[RawGraphRecord]) -> Result<TokenEmbedder> {
    let e = &cfg.embedder;
    fit_token_embeddings(&token_corpus(recs), e.dim, e.mode, &e.skipgram, e.seed)
}

fn pick(recs: &[RawGraphRecord], idx: &[usize]) -> Vec<RawGraphRecord> {
    idx.iter().map(|&i| recs[i].clone()).collect()
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let recs = generate_records(&cfg.synth)?;
    write(out, write_corpus_jsonl(&recs)?)?;
    let mut snap = out.as_os_str().to_owned();
    snap.push(".config.json");
    write(Path::new(&snap), pretty(cfg)?)
}

#[derive(Serialize)]
struct IngestSummary {
    graphs: usize,
    positives: usize,
    nodes_total: usize,
    nodes_max: usize,
    edges_total: usize,
    vocab_size: usize,
}

pub fn cmd_ingest(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let recs = load_records(corpus)?;
    let emb = fit_embedder(cfg, &recs)?;
    embed_all(&recs, &emb)?;
    let summary = IngestSummary {
        graphs: recs.len(),
        positives: recs.iter().filter(|r| r.label == 1).count(),
        nodes_total: recs.iter().map(|r| r.node_count()).sum(),
        nodes_max: recs.iter().map(|r| r.node_count()).max().unwrap_or(0),
        edges_total: recs.iter().map(|r| r.edges.len()).sum(),
        vocab_size: emb.vocab_len(),
    };
    write(&out.join("embedder.json"), emb.to_json()?)?;
    write(&out.join("summary.json"), pretty(&summary)?)?;
    write(&out.join("resolved_config.json"), pretty(cfg)?)
}

pub fn cmd_train(cfg: &RunConfig, corpus: &Path, out: &Path, embedder: Option<&Path>) -> Result<()> {
    let recs = load_records(corpus)?;
    let split = split_indices(recs.len(), cfg.train.split, cfg.seeds.data)?;
    let emb = match embedder {
        Some(p) => TokenEmbedder::from_json(&String::from_utf8_lossy(&read(p)?))?,
        None => fit_embedder(cfg, &pick(&recs, &split.train))?,
    };
    let train_set = embed_all(&pick(&recs, &split.train), &emb)?;
    let val_set = embed_all(&pick(&recs, &split.val), &emb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.model);
    let model = Model::init(&mut rng, emb.dim(), &cfg.model)?;
    let outcome = train(&train_set, &val_set, model, &cfg.refine, &cfg.train, cfg.seeds.train)?;
    let ck = Checkpoint::new(&outcome.best, cfg, Some(emb), outcome.best_step, outcome.best_val_f1)?;
    write(&out.join("checkpoint.json"), ck.to_json()?)?;
    write(&out.join("history.csv"), outcome.history.to_csv())?;
    write(&out.join("resolved_config.json"), pretty(cfg)?)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Model, TokenEmbedder)> {
    let ck = Checkpoint::from_json(&String::from_utf8_lossy(&read(path)?))?;
    let model = ck.model()?;
    let emb = ck
        .embedder
        .clone()
        .ok_or_else(|| Error::input("checkpoint carries no token embedder"))?;
    Ok((ck, model, emb))
}

#[derive(Debug, Clone, Serialize)]
pub struct Simplification {
    pub mean_nodes_in: f64,
    pub mean_nodes_out: f64,
    /// `1 - total out / total in` over the split.
    pub node_reduction: f64,
    /// Mean of per-graph `1 - out / in`; graphs at or below the threshold
    /// count as zero.
    pub mean_reduction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub graphs: usize,
    pub metrics: Metrics,
    pub simplification: Simplification,
    pub buckets: Vec<BucketRow>,
}

pub fn cmd_eval(ck_path: &Path, corpus: &Path, split: SplitArg, out: &Path) -> Result<()> {
    let (ck, model, emb) = load_checkpoint(ck_path)?;
    let cfg = &ck.config;
    let recs = load_records(corpus)?;
    let s = split_indices(recs.len(), cfg.train.split, cfg.seeds.data)?;
    let (name, idx) = match split {
        SplitArg::Train => ("train", s.train),
        SplitArg::Val => ("val", s.val),
        SplitArg::Test => ("test", s.test),
        SplitArg::All => ("all", (0..recs.len()).collect()),
    };
    let graphs = embed_all(&pick(&recs, &idx), &emb)?;
    let preds = predict_all(&model, &graphs, &cfg.refine, cfg.train.ablation, cfg.train.threshold)?;
    let p: Vec<u8> = preds.iter().map(|p| p.predicted_label).collect();
    let y: Vec<u8> = graphs.iter().map(|g| g.label()).collect();
    let sizes: Vec<usize> = graphs.iter().map(|g| g.node_count()).collect();
    let metrics = compute_metrics(&p, &y)?;
    let buckets = bucketed_accuracy(&sizes, &p, &y, &cfg.buckets)?;
    let m = graphs.len().max(1) as f64;
    let outs: Vec<usize> = preds
        .iter()
        .zip(&sizes)
        .map(|(pr, &n)| pr.trace.final_count(n))
        .collect();
    let (total_in, total_out) = (sizes.iter().sum::<usize>(), outs.iter().sum::<usize>());
    let simplification = Simplification {
        mean_nodes_in: total_in as f64 / m,
        mean_nodes_out: total_out as f64 / m,
        node_reduction: 1.0 - total_out as f64 / total_in.max(1) as f64,
        mean_reduction: sizes
            .iter()
            .zip(&outs)
            .map(|(&a, &b)| 1.0 - b as f64 / a as f64)
            .sum::<f64>()
            / m,
    };
    let names: Vec<&str> = graphs.iter().map(|g| g.name()).collect();
    let embeddings: Vec<_> = preds.iter().map(|p| p.embedding.clone()).collect();
    let report = EvalReport {
        split: name.into(),
        graphs: graphs.len(),
        metrics,
        simplification,
        buckets: buckets.clone(),
    };
    write(&out.join("metrics.json"), pretty(&report)?)?;
    write(&out.join("buckets.csv"), buckets_to_csv(&buckets))?;
    write(&out.join("embeddings.tsv"), export_embeddings(&names, &y, &embeddings)?)?;
    write(&out.join("resolved_config.json"), pretty(cfg)?)
}

#[derive(Serialize)]
struct PredictLine<'a> {
    name: &'a str,
    probability: f64,
    label: u8,
}

pub fn cmd_predict(ck_path: &Path, graph: &Path) -> Result<String> {
    let (ck, model, emb) = load_checkpoint(ck_path)?;
    let rec = load_graph_json(&read(graph)?)?;
    let g = to_labeled_graph(&rec, &emb)?;
    let cfg = &ck.config;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = trainer::forward(&model, &g, &cfg.refine, cfg.train.ablation, trainer::Mode::Eval, &mut rng)?;
    Ok(serde_json::to_string(&PredictLine {
        name: &rec.name,
        probability: p.probability,
        label: (p.probability >= cfg.train.threshold) as u8,
    })?)
}

pub fn cmd_simplify(cfg: &RunConfig, ck_path: Option<&Path>, graph: &Path, out: &Path) -> Result<()> {
    let (cfg, model, emb) = match ck_path {
        Some(p) => {
            let (ck, model, emb) = load_checkpoint(p)?;
            (ck.config, model, emb)
        }
        None => {
            let emb = TokenEmbedder::hash(cfg.embedder.dim, cfg.embedder.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.model);
            let model = Model::init(&mut rng, emb.dim(), &cfg.model)?;
            (cfg.clone(), model, emb)
        }
    };
    let rec = load_graph_json(&read(graph)?)?;
    let g = to_labeled_graph(&rec, &emb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, trace) = refine_graph(&g, &model.sapool, &cfg.refine, false, &mut rng)?;
    let kept = trace.surviving_nodes(g.node_count());
    let simplified = rec.induced(&kept)?;
    write(&out.join("simplified.json"), simplified.to_json()? + "\n")?;
    write(&out.join("trace.json"), pretty(&trace)?)?;
    write(&out.join("resolved_config.json"), pretty(&cfg)?)
}

pub fn cmd_report(run: &Path) -> Result<String> {
    let text = String::from_utf8_lossy(&read(&run.join("metrics.json"))?).into_owned();
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let f = |path: &str| v.pointer(path).and_then(|x| x.as_f64()).unwrap_or(f64::NAN);
    let mut s = format!(
        "split {}  graphs {}\naccuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}\n",
        v.pointer("/split").and_then(|x| x.as_str()).unwrap_or("?"),
        v.pointer("/graphs").and_then(|x| x.as_u64()).unwrap_or(0),
        f("/metrics/accuracy"),
        f("/metrics/precision"),
        f("/metrics/recall"),
        f("/metrics/f1"),
    );
    s.push_str(&format!(
        "nodes in {:.1} -> out {:.1}  (node reduction {:.1}%, per-graph mean {:.1}%)\n",
        f("/simplification/mean_nodes_in"),
        f("/simplification/mean_nodes_out"),
        100.0 * f("/simplification/node_reduction"),
        100.0 * f("/simplification/mean_reduction"),
    ));
    if let Some(rows) = v.pointer("/buckets").and_then(|b| b.as_array()) {
        s.push_str("bucket            count  accuracy\n");
        for r in rows {
            let lower = r["lower"].as_f64().unwrap_or(0.0);
            let label = match r["upper"].as_f64() {
                Some(u) => format!("({lower}, {u}]"),
                None => format!("({lower}, inf)"),
            };
            let acc = r["accuracy"].as_f64().map_or("-".to_string(), |a| format!("{a:.4}"));
            s.push_str(&format!("{label:<16} {:>6}  {acc}\n", r["count"].as_u64().unwrap_or(0)));
        }
    }
    Ok(s)
}

/// Runs one parsed invocation. Text meant for standard output is returned.
pub fn run(cli: Cli) -> Result<Option<String>> {
    let common = cli.common;
    let jobs = common.jobs;
    with_jobs(jobs, move || -> Result<Option<String>> {
        match cli.command {
            Command::Synth { out } => cmd_synth(&resolve_config(&common)?, &out).map(|_| None),
            Command::Ingest { corpus, out } => cmd_ingest(&resolve_config(&common)?, &corpus, &out).map(|_| None),
            Command::Train { corpus, out, embedder } => {
                cmd_train(&resolve_config(&common)?, &corpus, &out, embedder.as_deref()).map(|_| None)
            }
            Command::Eval {
                checkpoint,
                corpus,
                split,
                out,
            } => cmd_eval(&checkpoint, &corpus, split, &out).map(|_| None),
            Command::Predict { checkpoint, graph } => cmd_predict(&checkpoint, &graph).map(Some),
            Command::Simplify { checkpoint, graph, out } => {
                cmd_simplify(&resolve_config(&common)?, checkpoint.as_deref(), &graph, &out).map(|_| None)
            }
            Command::Report { run } => cmd_report(&run).map(Some),
        }
    })?
}
