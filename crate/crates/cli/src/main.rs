//! `segcross` command-line tool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use segcross::chunker::{
    self, assemble_context, ChunkerConfig, EmbedderSpec, EndpointConfig, LengthUnit, RetrievalIndex,
    DEFAULT_HASHED_DIM, DEFAULT_TEMPLATE,
};
use segcross::textprep::{self, paragraph_spans, LabeledDocument, SeparatorMode};
use segcross::training::{self, EvalOptions, SweepMode, SynthConfig, TrainConfig};
use segcross::{par, Error, Parallelism};
use serde_json::json;

#[derive(Parser)]
#[command(name = "segcross", version, about = "Text semantic segmentation and model-driven chunking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a segmenter on labeled JSONL documents.
    Train(TrainArgs),
    /// Boundary precision/recall/F1 of a checkpoint.
    Eval(EvalArgs),
    /// Predict paragraph boundaries for raw text or JSONL documents.
    Segment(SegmentArgs),
    /// Split a text file into retrieval chunks.
    Chunk(ChunkArgs),
    /// Embed chunks and write a retrieval index.
    Index(IndexArgs),
    /// Rank indexed chunks against a question and build a prompt.
    Query(QueryArgs),
    /// Metrics across maximum segment lengths.
    Sweep(SweepArgs),
    /// Generate a synthetic topic-switch corpus.
    Synth(SynthArgs),
    /// Convert an external corpus to labeled JSONL.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training config; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch loss CSV (default: <out>.loss.csv).
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Count each document's final sentence too.
    #[arg(long)]
    include_final_boundary: bool,
    /// Override the checkpoint's fusion switch (true|false).
    #[arg(long)]
    csfm: Option<bool>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw text file, or `.jsonl` documents.
    #[arg(long)]
    input: PathBuf,
    /// newline | period | regex:<pattern>
    #[arg(long, default_value = "newline")]
    separator: SeparatorMode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChunkArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1000)]
    max_chunk_chars: usize,
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    #[arg(long, default_value_t = 1)]
    min_sentences: usize,
    /// Threshold unit: chars | tokens.
    #[arg(long, default_value = "chars")]
    unit: LengthUnit,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EndpointArgs {
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

impl EndpointArgs {
    fn config(&self, url: &str) -> EndpointConfig {
        EndpointConfig { url: url.to_string(), timeout_ms: self.timeout_ms, retries: self.retries }
    }
}

#[derive(Args)]
struct IndexArgs {
    /// Chunk JSONL as written by `chunk`.
    #[arg(long)]
    chunks: PathBuf,
    /// hashed | external
    #[arg(long, default_value = "hashed")]
    embedder: String,
    #[arg(long, default_value_t = DEFAULT_HASHED_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SEGCROSS_EMBED_URL")]
    embed_url: Option<String>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Prompt template with {context} and {question}.
    #[arg(long)]
    template: Option<String>,
    /// Completion service URL; when set the prompt is sent and the answer printed.
    #[arg(long, env = "SEGCROSS_COMPLETE_URL")]
    complete_endpoint: Option<String>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated maximum segment lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    max_len: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// reeval | retrain
    #[arg(long, default_value = "reeval")]
    mode: SweepMode,
    /// Training documents for retrain mode.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Training config for retrain mode.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    include_final_boundary: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    topics: usize,
    #[arg(long)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_parser = ["wiki727k"])]
    format: String,
    /// A file or a directory of files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Json { context: path.display().to_string(), source: e }.into())
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).map_err(|e| Error::Io { path: p.into(), source: e })?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "doc".into())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    let docs = textprep::read_jsonl(&a.data)?;
    let vocab = training::vocab_for(&docs, cfg.min_freq);
    let data = training::tokenize_all(&docs, &vocab, &cfg.preprocess)?;
    let outcome = training::train(&data, &vocab, &cfg)?;
    training::save_checkpoint(&a.out, &outcome.model)?;
    let log_path = a.loss_log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        p.into()
    });
    training::write_loss_csv(&log_path, &outcome.log)?;
    println!(
        "trained {} documents for {} epochs: loss {:.6} -> {:.6}; wrote {}",
        data.len(),
        cfg.epochs,
        outcome.initial_loss(),
        outcome.final_loss(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = training::load_checkpoint(&a.model)?;
    let docs = textprep::read_jsonl(&a.data)?;
    let data = training::tokenize_all(&docs, &model.vocab, &model.preprocess)?;
    let opts = EvalOptions {
        exclude_final_boundary: !a.include_final_boundary,
        csfm_enabled: a.csfm,
        parallelism: Parallelism::from_jobs(a.jobs),
    };
    let m = par::with_jobs(a.jobs, || training::evaluate(&data, &model, &opts))?;
    log::info!("tp={} fp={} fn={} over {} documents", m.tp, m.fp, m.fn_, data.len());
    println!("{}", m.summary());
    Ok(())
}

fn segment(a: SegmentArgs) -> anyhow::Result<()> {
    let model = training::load_checkpoint(&a.model)?;
    let docs: Vec<(String, Vec<String>)> = if a.input.extension().is_some_and(|e| e == "jsonl") {
        textprep::read_jsonl(&a.input)?.into_iter().map(|d| (d.id, d.sentences)).collect()
    } else {
        let text = read_text(&a.input)?;
        vec![(stem(&a.input), textprep::split_sentences(&text, &a.separator)?)]
    };
    let mut out = open_out(a.out.as_deref())?;
    for (id, sentences) in docs {
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let labels = model.predict_sentences(&refs)?;
        let spans: Vec<[usize; 2]> = paragraph_spans(&labels).into_iter().map(|(s, e)| [s, e]).collect();
        writeln!(out, "{}", json!({ "id": id, "labels": labels, "paragraph_spans": spans }))?;
    }
    out.flush()?;
    Ok(())
}

fn chunk(a: ChunkArgs) -> anyhow::Result<()> {
    let model = training::load_checkpoint(&a.model)?;
    let text = read_text(&a.input)?;
    let cfg = ChunkerConfig {
        max_chunk_len: a.max_chunk_chars,
        unit: a.unit,
        max_depth: a.max_depth,
        min_sentences_per_chunk: a.min_sentences,
    };
    let chunks = chunker::split_recursive(&text, &model, &cfg)?;
    let flagged = chunks.iter().filter(|c| c.oversize).count();
    if flagged > 0 {
        log::warn!("{flagged} chunk(s) exceed the threshold and could not be split further");
    }
    let mut out = open_out(a.out.as_deref())?;
    for c in &chunks {
        writeln!(out, "{}", serde_json::to_string(c)?)?;
    }
    out.flush()?;
    Ok(())
}

fn read_chunks(path: &Path) -> anyhow::Result<Vec<chunker::Chunk>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Json { context: format!("{}:{}", path.display(), i + 1), source: e }.into())
        })
        .collect()
}

fn index(a: IndexArgs) -> anyhow::Result<()> {
    let spec = match a.embedder.as_str() {
        "hashed" | "hashed-ngram" => EmbedderSpec::HashedNgram { dim: a.dim, seed: a.seed },
        "external" | "external-endpoint" => {
            let Some(url) = a.embed_url.as_deref() else {
                return Err(Error::Config("external embedder needs --embed-url or SEGCROSS_EMBED_URL".into()).into());
            };
            EmbedderSpec::ExternalEndpoint { endpoint: a.endpoint.config(url) }
        }
        other => return Err(Error::Config(format!("unknown embedder {other:?} (expected hashed or external)")).into()),
    };
    let chunks = read_chunks(&a.chunks)?;
    let n = chunks.len();
    let idx = par::with_jobs(a.jobs, || RetrievalIndex::build(chunks, spec, Parallelism::from_jobs(a.jobs)))?;
    idx.save(&a.out)?;
    println!("indexed {n} chunks (dim {}) into {}", idx.dim, a.out.display());
    Ok(())
}

fn query(a: QueryArgs) -> anyhow::Result<()> {
    let idx = RetrievalIndex::load(&a.index)?;
    let ranked = idx.query(&a.question, a.top_k)?;
    let texts: Vec<&str> = ranked.iter().map(|&(i, _)| idx.chunks[i].text.as_str()).collect();
    let prompt = assemble_context(&texts, a.template.as_deref().unwrap_or(DEFAULT_TEMPLATE), &a.question)?;
    let answer = match a.complete_endpoint.as_deref() {
        Some(url) => Some(chunker::complete(&prompt, &a.endpoint.config(url)).map_err(Error::from)?),
        None => None,
    };
    let results: Vec<_> = ranked
        .iter()
        .map(|&(i, score)| json!({ "chunk_id": i, "score": score, "text": idx.chunks[i].text }))
        .collect();
    let mut out = json!({ "question": a.question, "results": results, "prompt": prompt });
    if let Some(answer) = answer {
        out["answer"] = json!(answer);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let model = training::load_checkpoint(&a.model)?;
    let eval_docs = textprep::read_jsonl(&a.data)?;
    let train_docs = match (&a.mode, &a.train_data) {
        (SweepMode::Retrain, Some(p)) => Some(textprep::read_jsonl(p)?),
        (SweepMode::Retrain, None) => bail!(Error::Config("--mode retrain needs --train-data".into())),
        _ => None,
    };
    let cfg = read_config(a.config.as_deref())?;
    let opts = EvalOptions { exclude_final_boundary: !a.include_final_boundary, ..EvalOptions::default() };
    let rows = training::sweep_input_length(
        &model,
        &eval_docs,
        train_docs.as_deref().map(|d| (d, &cfg)),
        &a.max_len,
        a.mode,
        &opts,
    )?;
    training::write_sweep_csv(&a.out, &rows)?;
    for r in &rows {
        match &r.metrics {
            Some(m) => println!("M={}: {}", r.max_len, m.summary()),
            None => println!("M={}: {}", r.max_len, r.note),
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let docs = training::synth_corpus(&SynthConfig { n_docs: a.docs, n_topics: a.topics, seed: a.seed, ..Default::default() })?;
    textprep::write_jsonl(&a.out, &docs)?;
    println!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

fn collect_files(root: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if root.is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::Io { path: root.into(), source: e })?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Io { path: root.into(), source: e })?;
    entries.sort();
    for e in entries {
        collect_files(&e, out)?;
    }
    Ok(())
}

fn convert(a: ConvertArgs) -> anyhow::Result<()> {
    let mut files = Vec::new();
    collect_files(&a.input, &mut files)?;
    let mut docs: Vec<LabeledDocument> = Vec::new();
    let mut skipped = 0;
    for f in &files {
        let text = read_text(f)?;
        let id = f.strip_prefix(&a.input).ok().filter(|p| !p.as_os_str().is_empty()).unwrap_or(f);
        match textprep::convert_wiki727k(&id.to_string_lossy(), &text) {
            Some(d) => docs.push(d),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} file(s) without sentences");
    }
    textprep::write_jsonl(&a.out, &docs)?;
    println!("converted {} documents into {}", docs.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Segment(a) => segment(a),
        Command::Chunk(a) => chunk(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Convert(a) => convert(a),
    }
}

/// 1 for bad input or environment, 2 for broken internal contracts.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if !e.is_user_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
