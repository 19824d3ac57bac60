//! Command-line front end: training, topic inspection, coherence reports,
//! trace plots, synthetic data and reference indexing.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or corrupt data,
//! 4 evaluation degeneracy, 5 numeric failure.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coherence::{build_index, model_coherence, CoherenceIndex, ModelCoherence};
use crate::corpus::{
    build_corpus, default_stopwords, load_stopwords, read_documents, tokenize,
};
use crate::embeddings::load_embeddings;
use crate::error::{Error, Result};
use crate::inference::{
    normalize_trace, read_trace_csv, run, write_trace_csv, ScheduleConfig, TraceField,
};
use crate::model::{from_checkpoint_json, to_checkpoint_json, top_words, GlobalState, Hyperparams};
use crate::synth::{generate, SynthConfig};

#[derive(Parser, Debug)]
#[command(
    name = "shdp",
    version,
    about = "Spherical topic modeling on word embeddings with PMI coherence evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write checkpoint.json, trace.csv and config.toml
    Train(TrainArgs),
    /// Print the top words of each active topic as column-wise TSV
    Topics(TopicsArgs),
    /// Score topic coherence against a reference corpus
    Coherence(CoherenceArgs),
    /// Normalize a training trace and render it as CSV and SVG
    PlotTrace(PlotTraceArgs),
    /// Generate a synthetic corpus with known topics
    Synth(SynthArgs),
    /// Build and save a co-occurrence index over a reference corpus
    Index(IndexArgs),
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// TOML config file; explicit flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus: file with one document per line, or directory of .txt files
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Word embeddings in word2vec text format
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Stopword list, one word per line [default: bundled English list]
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Output directory [default: run]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop words seen fewer times than this in the corpus [default: 1]
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Worker threads for parallel sections [default: all cores]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Topic truncation level T [default: 100]
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Corpus-level stick-breaking concentration gamma [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Document Dirichlet concentration alpha [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Location of the log-Normal prior on kappa [default: ln(100) = 4.6051701859880918]
    #[arg(long)]
    pub kappa_prior_m: Option<f64>,
    /// Scale of the log-Normal prior on kappa [default: 1]
    #[arg(long)]
    pub kappa_prior_sigma: Option<f64>,
    /// Concentration of the vMF prior on topic directions [default: 0.01]
    #[arg(long)]
    pub c0: Option<f64>,
    /// Step-size delay tau0 >= 0 [default: 64]
    #[arg(long)]
    pub tau0: Option<f64>,
    /// Step-size forgetting rate in (0.5, 1] [default: 0.7]
    #[arg(long)]
    pub decay: Option<f64>,
    /// Documents per minibatch [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum training epochs [default: 50]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Importance samples per kappa update [default: 1000]
    #[arg(long)]
    pub kappa_samples: Option<usize>,
    /// Relative tolerance of the convergence check [default: 0.0001]
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    /// Held-out document fraction in [0, 1) [default: 0.1]
    #[arg(long)]
    pub heldout_fraction: Option<f64>,
    /// Per-document theta update: paper or standard [default: paper]
    #[arg(long)]
    pub theta_update: Option<String>,
    /// Gradient step size of the beta update [default: 0.1]
    #[arg(long)]
    pub beta_step_size: Option<f64>,
    /// Ascent iterations per beta update [default: 20]
    #[arg(long)]
    pub beta_iters: Option<usize>,
    /// Batches between beta updates [default: 5]
    #[arg(long)]
    pub beta_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Words per topic [default: 10]
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Prebuilt coherence index; adds a PMI row to the table
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CoherenceArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prebuilt coherence index (alternative to --reference)
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Reference corpus: file of line documents or directory of .txt files
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Sliding-window width in tokens when building from --reference [default: 20]
    #[arg(long)]
    pub window: Option<usize>,
    /// Words per topic [default: 10]
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Write a CSV report (topic_id,coherence,coverage,top_words) here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotTraceArgs {
    /// Trace CSV written by `train`
    #[arg(long)]
    pub trace: PathBuf,
    /// Column to normalize: elbo or heldout [default: elbo]
    #[arg(long)]
    pub field: Option<String>,
    /// Output path of the normalized CSV [default: normalized.csv next to the trace]
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Output path of the SVG chart [default: trace.svg next to the trace]
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for embeddings.txt, corpus.txt and truth.json
    #[arg(long)]
    pub out: PathBuf,
    /// Planted topic count K [default: 5]
    #[arg(long)]
    pub num_topics: Option<usize>,
    /// Embedding dimension M [default: 10]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Emission concentration kappa [default: 50]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Documents to generate [default: 500]
    #[arg(long)]
    pub num_docs: Option<usize>,
    /// Tokens per document [default: 100]
    #[arg(long)]
    pub doc_len: Option<usize>,
    /// Vocabulary size [default: 50 per topic]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Stick-breaking concentration of the planted weights [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Document Dirichlet concentration [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Reference corpus: file of line documents or directory of .txt files
    #[arg(long)]
    pub reference: PathBuf,
    /// Checkpoint whose vocabulary is the target word set
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output path of the binary index
    #[arg(long)]
    pub out: PathBuf,
    /// Sliding-window width in tokens [default: 20]
    #[arg(long)]
    pub window: Option<usize>,
}

/// Optional values accepted from a TOML config file; any flag given on the
/// command line takes precedence.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    corpus: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    out: Option<PathBuf>,
    min_count: Option<usize>,
    workers: Option<usize>,
    truncation: Option<usize>,
    gamma: Option<f64>,
    alpha: Option<f64>,
    kappa_prior_m: Option<f64>,
    kappa_prior_sigma: Option<f64>,
    c0: Option<f64>,
    tau0: Option<f64>,
    decay: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    seed: Option<u64>,
    kappa_samples: Option<usize>,
    convergence_tol: Option<f64>,
    heldout_fraction: Option<f64>,
    theta_update: Option<String>,
    beta_step_size: Option<f64>,
    beta_iters: Option<usize>,
    beta_every: Option<u64>,
}

/// Fully resolved training configuration, written next to every run's
/// outputs so any artifact can be reproduced from it.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    pub out: PathBuf,
    pub min_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub hyper: Hyperparams,
    pub schedule: ScheduleConfig,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read --config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config file {}: {e}", p.display())))
        }
    }
}

fn resolve_run_config(args: &TrainArgs) -> Result<RunConfig> {
    let file = load_file_config(args.config.as_deref())?;
    let hyper_defaults = Hyperparams::default();
    let sched_defaults = ScheduleConfig::default();
    let corpus = args
        .corpus
        .clone()
        .or(file.corpus)
        .ok_or_else(|| Error::Config("missing --corpus (or 'corpus' in the config file)".into()))?;
    let embeddings = args.embeddings.clone().or(file.embeddings).ok_or_else(|| {
        Error::Config("missing --embeddings (or 'embeddings' in the config file)".into())
    })?;
    let theta_update = match args.theta_update.clone().or(file.theta_update) {
        None => sched_defaults.theta_update,
        Some(s) => s.parse()?,
    };
    let hyper = Hyperparams {
        truncation: args.truncation.or(file.truncation).unwrap_or(hyper_defaults.truncation),
        gamma: args.gamma.or(file.gamma).unwrap_or(hyper_defaults.gamma),
        alpha: args.alpha.or(file.alpha).unwrap_or(hyper_defaults.alpha),
        kappa_prior_m: args
            .kappa_prior_m
            .or(file.kappa_prior_m)
            .unwrap_or(hyper_defaults.kappa_prior_m),
        kappa_prior_sigma: args
            .kappa_prior_sigma
            .or(file.kappa_prior_sigma)
            .unwrap_or(hyper_defaults.kappa_prior_sigma),
        c0: args.c0.or(file.c0).unwrap_or(hyper_defaults.c0),
    };
    let schedule = ScheduleConfig {
        tau0: args.tau0.or(file.tau0).unwrap_or(sched_defaults.tau0),
        decay: args.decay.or(file.decay).unwrap_or(sched_defaults.decay),
        batch_size: args
            .batch_size
            .or(file.batch_size)
            .unwrap_or(sched_defaults.batch_size),
        max_epochs: args
            .max_epochs
            .or(file.max_epochs)
            .unwrap_or(sched_defaults.max_epochs),
        seed: args.seed.or(file.seed).unwrap_or(sched_defaults.seed),
        kappa_sample_count: args
            .kappa_samples
            .or(file.kappa_samples)
            .unwrap_or(sched_defaults.kappa_sample_count),
        convergence_tol: args
            .convergence_tol
            .or(file.convergence_tol)
            .unwrap_or(sched_defaults.convergence_tol),
        heldout_fraction: args
            .heldout_fraction
            .or(file.heldout_fraction)
            .unwrap_or(sched_defaults.heldout_fraction),
        theta_update,
        beta_step_size: args
            .beta_step_size
            .or(file.beta_step_size)
            .unwrap_or(sched_defaults.beta_step_size),
        beta_iters: args
            .beta_iters
            .or(file.beta_iters)
            .unwrap_or(sched_defaults.beta_iters),
        beta_every: args
            .beta_every
            .or(file.beta_every)
            .unwrap_or(sched_defaults.beta_every),
    };
    Ok(RunConfig {
        corpus,
        embeddings,
        stopwords: args.stopwords.clone().or(file.stopwords),
        out: args
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("run")),
        min_count: args.min_count.or(file.min_count).unwrap_or(1),
        workers: args.workers.or(file.workers),
        hyper,
        schedule,
    })
}

fn configure_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<GlobalState> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_checkpoint_json(&json)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = resolve_run_config(args)?;
    config.hyper.validate()?;
    config.schedule.validate()?;
    configure_workers(config.workers)?;

    let stopwords = match &config.stopwords {
        Some(path) => load_stopwords(path)?,
        None => default_stopwords(),
    };
    let raw_docs = read_documents(&config.corpus)?;
    let mut candidates: HashSet<String> = HashSet::new();
    for (_, text) in &raw_docs {
        for token in tokenize(text) {
            if !stopwords.contains(&token) {
                candidates.insert(token);
            }
        }
    }
    let table = load_embeddings(&config.embeddings, Some(&candidates))?;
    let corpus = build_corpus(&raw_docs, &table, &stopwords, config.min_count)?;
    log::info!(
        "corpus: {} documents, {} vocabulary words",
        corpus.docs.len(),
        corpus.vocab.len()
    );

    std::fs::create_dir_all(&config.out)?;
    let result = match run(&corpus, &table, &config.hyper, &config.schedule) {
        Err(Error::NonFiniteElbo {
            step,
            checkpoint_json,
        }) => {
            let dump = config.out.join("abort_checkpoint.json");
            std::fs::write(&dump, &checkpoint_json)?;
            return Err(Error::Numeric(format!(
                "ELBO became non-finite at step {step}; state dumped to {}",
                dump.display()
            )));
        }
        other => other?,
    };

    let checkpoint_path = config.out.join("checkpoint.json");
    std::fs::write(&checkpoint_path, to_checkpoint_json(&result.state)?)?;
    let trace_path = config.out.join("trace.csv");
    write_trace_csv(&trace_path, &result.trace)?;
    let config_path = config.out.join("config.toml");
    let config_text = toml::to_string_pretty(&config)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    std::fs::write(&config_path, config_text)?;

    println!(
        "trained {} documents ({} held out) for {} global steps; {} active topics",
        result.train_docs,
        result.heldout_docs,
        result.state.step_count,
        result.state.active_topics().len()
    );
    if result.converged {
        println!("converged before the epoch limit");
    }
    println!("checkpoint: {}", checkpoint_path.display());
    println!("trace: {}", trace_path.display());
    println!("config: {}", config_path.display());
    Ok(())
}

/// Column-wise topic table: one header row of topic ids, `top_n` word rows,
/// and a PMI row when an index is given.
pub fn render_topics(
    state: &GlobalState,
    top_n: usize,
    index: Option<&CoherenceIndex>,
) -> Result<String> {
    if top_n == 0 {
        return Err(Error::Config("top-n must be >= 1".into()));
    }
    let active = state.active_topics();
    if active.is_empty() {
        return Err(Error::Degenerate("model has no active topics".into()));
    }
    let mut columns: Vec<Vec<String>> = Vec::with_capacity(active.len());
    for &k in &active {
        let words: Vec<String> = top_words(state, k, top_n)?
            .into_iter()
            .map(|(w, _)| w)
            .collect();
        columns.push(words);
    }
    let mut out = String::new();
    let header: Vec<String> = active.iter().map(|k| format!("topic_{k}")).collect();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for row in 0..top_n {
        let cells: Vec<&str> = columns
            .iter()
            .map(|c| c.get(row).map(String::as_str).unwrap_or(""))
            .collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    if let Some(index) = index {
        let mut cells = Vec::with_capacity(active.len());
        for (i, &k) in active.iter().enumerate() {
            let list = crate::coherence::TopicWordList {
                topic_id: k,
                words: columns[i].clone(),
            };
            match crate::coherence::topic_coherence(index, &list) {
                Ok(tc) => cells.push(format!("{:.3}", tc.value)),
                Err(Error::Degenerate(_)) => cells.push("n/a".to_string()),
                Err(e) => return Err(e),
            }
        }
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_topics(args: &TopicsArgs) -> Result<()> {
    let state = load_checkpoint(&args.checkpoint)?;
    let index = match &args.index {
        Some(path) => Some(CoherenceIndex::load(path)?),
        None => None,
    };
    let table = render_topics(&state, args.top_n.unwrap_or(10), index.as_ref())?;
    print!("{table}");
    Ok(())
}

fn load_or_build_index(
    index: Option<&Path>,
    reference: Option<&Path>,
    vocab: &[String],
    window: usize,
) -> Result<CoherenceIndex> {
    match (index, reference) {
        (Some(path), _) => CoherenceIndex::load(path),
        (None, Some(path)) => {
            let texts: Vec<String> = read_documents(path)?
                .into_iter()
                .map(|(_, text)| text)
                .collect();
            let target: HashSet<String> = vocab.iter().cloned().collect();
            build_index(&texts, &target, window)
        }
        (None, None) => Err(Error::Config(
            "need either --index or --reference".into(),
        )),
    }
}

pub fn write_coherence_report(path: &Path, report: &ModelCoherence) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "topic_id,coherence,coverage,top_words")?;
    for row in &report.per_topic {
        writeln!(
            out,
            "{},{},{},{}",
            row.topic_id,
            row.coherence,
            row.coverage,
            row.words.join(" ")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_coherence(args: &CoherenceArgs) -> Result<()> {
    if args.index.is_none() && args.reference.is_none() {
        return Err(Error::Config("need either --index or --reference".into()));
    }
    let state = load_checkpoint(&args.checkpoint)?;
    let index = load_or_build_index(
        args.index.as_deref(),
        args.reference.as_deref(),
        &state.vocab,
        args.window.unwrap_or(20),
    )?;
    let report = model_coherence(&index, &state, args.top_n.unwrap_or(10))?;
    for row in &report.per_topic {
        println!(
            "topic {:>3}: coherence {:+.6} coverage {:.4} words: {}",
            row.topic_id,
            row.coherence,
            row.coverage,
            row.words.join(" ")
        );
    }
    println!("average coherence over {} topics: {:+.6}", report.per_topic.len(), report.average);
    if let Some(path) = &args.report {
        write_coherence_report(path, &report)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

/// Minimal line chart of the normalized trace with axes and tick labels.
pub fn render_trace_svg(points: &[(u64, f64)]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let min_step = points.first().map(|p| p.0).unwrap_or(0) as f64;
    let max_step = points.last().map(|p| p.0).unwrap_or(1) as f64;
    let span = (max_step - min_step).max(1.0);
    let x = |step: f64| MARGIN + (step - min_step) / span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - v * (HEIGHT - 2.0 * MARGIN);
    let coords: Vec<String> = points
        .iter()
        .map(|&(s, v)| format!("{:.2},{:.2}", x(s as f64), y(v)))
        .collect();
    format!(
        concat!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "  <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "  <line x1=\"{m}\" y1=\"{ybot}\" x2=\"{xright}\" y2=\"{ybot}\" stroke=\"black\"/>\n",
            "  <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{ybot}\" stroke=\"black\"/>\n",
            "  <text x=\"{m}\" y=\"{xlaby}\" font-size=\"12\">step {smin}</text>\n",
            "  <text x=\"{xright}\" y=\"{xlaby}\" font-size=\"12\" text-anchor=\"end\">step {smax}</text>\n",
            "  <text x=\"{ylabx}\" y=\"{ybot}\" font-size=\"12\" text-anchor=\"end\">0</text>\n",
            "  <text x=\"{ylabx}\" y=\"{ytop}\" font-size=\"12\" text-anchor=\"end\">1</text>\n",
            "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        m = MARGIN,
        ybot = HEIGHT - MARGIN,
        ytop = MARGIN,
        xright = WIDTH - MARGIN,
        xlaby = HEIGHT - MARGIN + 20.0,
        ylabx = MARGIN - 8.0,
        smin = min_step as u64,
        smax = max_step as u64,
        pts = coords.join(" ")
    )
}

pub fn cmd_plot_trace(args: &PlotTraceArgs) -> Result<()> {
    let trace = read_trace_csv(&args.trace)?;
    let field: TraceField = args.field.as_deref().unwrap_or("elbo").parse()?;
    let normalized = normalize_trace(&trace, field)?;
    let parent = args
        .trace
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let csv_path = args
        .out_csv
        .clone()
        .unwrap_or_else(|| parent.join("normalized.csv"));
    let svg_path = args
        .out_svg
        .clone()
        .unwrap_or_else(|| parent.join("trace.svg"));
    let mut out = String::from("step,normalized\n");
    for (step, value) in &normalized {
        out.push_str(&format!("{step},{value}\n"));
    }
    std::fs::write(&csv_path, out)?;
    std::fs::write(&svg_path, render_trace_svg(&normalized))?;
    println!("normalized: {}", csv_path.display());
    println!("chart: {}", svg_path.display());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let num_topics = args.num_topics.unwrap_or(5);
    let cfg = SynthConfig {
        num_topics,
        dim: args.dim.unwrap_or(10),
        kappa: args.kappa.unwrap_or(50.0),
        num_docs: args.num_docs.unwrap_or(500),
        doc_len: args.doc_len.unwrap_or(100),
        vocab_size: args.vocab_size.unwrap_or(50 * num_topics),
        gamma: args.gamma.unwrap_or(1.0),
        alpha: args.alpha.unwrap_or(1.0),
        seed: args.seed.unwrap_or(0),
    };
    let output = generate(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let embeddings_path = args.out.join("embeddings.txt");
    output.table.save(&embeddings_path)?;
    let corpus_path = args.out.join("corpus.txt");
    let mut text = String::new();
    for doc in &output.corpus.docs {
        let mut tokens = Vec::with_capacity(doc.token_count() as usize);
        for (wi, &word) in doc.words.iter().enumerate() {
            for _ in 0..doc.counts[wi] as usize {
                tokens.push(output.corpus.vocab[word as usize].as_str());
            }
        }
        text.push_str(&tokens.join(" "));
        text.push('\n');
    }
    std::fs::write(&corpus_path, text)?;
    let truth_path = args.out.join("truth.json");
    #[derive(Serialize)]
    struct TruthFile<'a> {
        config: &'a SynthConfig,
        truth: &'a crate::synth::SynthTruth,
    }
    let truth_json = serde_json::to_string_pretty(&TruthFile {
        config: &cfg,
        truth: &output.truth,
    })
    .map_err(|e| Error::Numeric(format!("truth serialization: {e}")))?;
    std::fs::write(&truth_path, truth_json)?;
    println!(
        "generated {} documents over {} words in {}",
        cfg.num_docs,
        cfg.vocab_size,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_index(args: &IndexArgs) -> Result<()> {
    let state = load_checkpoint(&args.checkpoint)?;
    let texts: Vec<String> = read_documents(&args.reference)?
        .into_iter()
        .map(|(_, text)| text)
        .collect();
    let target: HashSet<String> = state.vocab.iter().cloned().collect();
    let index = build_index(&texts, &target, args.window.unwrap_or(20))?;
    index.save(&args.out)?;
    println!(
        "indexed {} windows, {} words seen; saved to {}",
        index.total_windows(),
        target.len(),
        args.out.display()
    );
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 3,
        Error::Degenerate(_) => 4,
        Error::Numeric(_) | Error::NonFiniteElbo { .. } => 5,
    }
}

fn category(err: &Error) -> &'static str {
    match err {
        Error::Config(_) | Error::Domain(_) => "config error",
        Error::Parse { .. } | Error::Data(_) | Error::Io(_) => "data error",
        Error::Degenerate(_) => "evaluation error",
        Error::Numeric(_) | Error::NonFiniteElbo { .. } => "numeric error",
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Topics(args) => cmd_topics(args),
        Command::Coherence(args) => cmd_coherence(args),
        Command::PlotTrace(args) => cmd_plot_trace(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Index(args) => cmd_index(args),
    }
}

pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {e}", category(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("config.toml");
        std::fs::write(
            &config_path,
            concat!(
                "corpus = \"from_file.txt\"\n",
                "embeddings = \"emb.txt\"\n",
                "truncation = 7\n",
                "seed = 9\n",
                "decay = 0.9\n",
                "theta_update = \"standard\"\n",
            ),
        )
        .unwrap();
        let args = TrainArgs {
            config: Some(config_path),
            seed: Some(123),
            ..TrainArgs::default()
        };
        let resolved = resolve_run_config(&args).unwrap();
        assert_eq!(resolved.corpus, PathBuf::from("from_file.txt"));
        assert_eq!(resolved.hyper.truncation, 7);
        assert_eq!(resolved.schedule.seed, 123, "flag beats file");
        assert_eq!(resolved.schedule.decay, 0.9, "file beats default");
        assert_eq!(resolved.schedule.tau0, 64.0, "default fills the rest");
        assert_eq!(
            resolved.schedule.theta_update,
            crate::model::ThetaUpdate::Standard
        );
        assert_eq!(resolved.min_count, 1);
    }

    #[test]
    fn missing_required_paths_name_the_flag() {
        let args = TrainArgs::default();
        match resolve_run_config(&args) {
            Err(Error::Config(msg)) => assert!(msg.contains("--corpus"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
        let args = TrainArgs {
            corpus: Some(PathBuf::from("c.txt")),
            ..TrainArgs::default()
        };
        match resolve_run_config(&args) {
            Err(Error::Config(msg)) => assert!(msg.contains("--embeddings"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("config.toml");
        std::fs::write(&config_path, "corpus = \"a\"\nembeddings = \"b\"\ntypo_key = 1\n")
            .unwrap();
        let args = TrainArgs {
            config: Some(config_path),
            ..TrainArgs::default()
        };
        assert!(matches!(resolve_run_config(&args), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes_follow_error_categories() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Domain("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Parse {
                line: 1,
                msg: "x".into()
            }),
            3
        );
        assert_eq!(exit_code(&Error::Degenerate("x".into())), 4);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 5);
        assert_eq!(
            exit_code(&Error::NonFiniteElbo {
                step: 1,
                checkpoint_json: String::new()
            }),
            5
        );
    }

    #[test]
    fn svg_rendering_is_plausible_xml() {
        let svg = render_trace_svg(&[(1, 0.0), (5, 0.5), (9, 1.0)]);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("step 1"));
        assert!(svg.contains("step 9"));
    }

    #[test]
    fn cli_parses_every_subcommand() {
        Cli::try_parse_from(["shdp", "train", "--corpus", "c", "--embeddings", "e"]).unwrap();
        Cli::try_parse_from(["shdp", "topics", "--checkpoint", "c.json", "--top-n", "5"]).unwrap();
        Cli::try_parse_from([
            "shdp",
            "coherence",
            "--checkpoint",
            "c.json",
            "--reference",
            "ref",
        ])
        .unwrap();
        Cli::try_parse_from(["shdp", "plot-trace", "--trace", "t.csv"]).unwrap();
        Cli::try_parse_from(["shdp", "synth", "--out", "d", "--num-topics", "3"]).unwrap();
        Cli::try_parse_from([
            "shdp",
            "index",
            "--reference",
            "r",
            "--checkpoint",
            "c.json",
            "--out",
            "i.bin",
        ])
        .unwrap();
        assert!(Cli::try_parse_from(["shdp", "bogus"]).is_err());
    }
}
