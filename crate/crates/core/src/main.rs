use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kpeval::corpus::load_dataset;
use kpeval::embedding::{Embedder, FileProvider};
use kpeval::meta_eval::{
    CorrelationStat, DEFAULT_LEVEL, DEFAULT_RESAMPLES, DEFAULT_UNIFORMITY_PAIRS,
};
use kpeval::pipeline::{
    load_human_judgments, load_variation_pairs, run_diagnostics, run_eval, run_meta_eval,
    write_indexes, Dimension, EmbeddingSource, EvalConfig, MetaEvalConfig, MetricPair, Providers,
    RetrieverKind, ScorerSource,
};
use kpeval::report::{emit_report, read_report, render_table, ReportFormat};
use kpeval::sidecar::SidecarClient;

#[derive(Parser)]
#[command(name = "kpeval", version, about = "Keyphrase evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a system's predictions and write a report.
    Eval(EvalArgs),
    /// Correlate metric values with human judgments.
    MetaEval(MetaEvalArgs),
    /// Build and cache retrieval indexes for a corpus.
    Index(IndexArgs),
    /// Alignment/uniformity diagnostics for the embedding model.
    Diag(DiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingsKind {
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerKind {
    Stub,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    Pearson,
    Spearman,
    Kendall,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Jsonl,
    Table,
}

#[derive(Args)]
struct ProviderArgs {
    /// JSONL file of {"phrase", "vector"} records.
    #[arg(long, conflicts_with = "embeddings")]
    embeddings_file: Option<PathBuf>,
    /// Use the sidecar for embeddings.
    #[arg(long, value_enum)]
    embeddings: Option<EmbeddingsKind>,
    #[arg(long, env = "KPEVAL_SIDECAR_URL")]
    sidecar_url: Option<String>,
    #[arg(long, env = "KPEVAL_SIDECAR_TOKEN", hide_env_values = true)]
    sidecar_token: Option<String>,
}

impl ProviderArgs {
    fn source(&self) -> EmbeddingSource {
        match (&self.embeddings_file, self.embeddings) {
            (Some(path), _) => EmbeddingSource::File { path: path.clone() },
            (None, Some(EmbeddingsKind::Http)) => EmbeddingSource::Http,
            (None, None) => EmbeddingSource::None,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Instances JSONL (id, title, abstract, references, predictions).
    #[arg(long)]
    instances: PathBuf,
    /// Retrieval corpus JSONL (id, text); defaults to the instances themselves.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "kpeval-out")]
    out: PathBuf,
    #[arg(long, default_value = "system")]
    system: String,
    /// Comma-separated subset of naturalness, faithfulness, saliency,
    /// coverage, diversity, utility.
    #[arg(long, value_delimiter = ',')]
    dimensions: Option<Vec<String>>,
    #[arg(long)]
    no_baselines: bool,
    #[arg(long, default_value_t = kpeval::ref_metrics::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = kpeval::utility::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = kpeval::utility::DEFAULT_BASE)]
    base: usize,
    #[arg(long, value_delimiter = ',', default_value = "bm25,dense")]
    retrievers: Vec<String>,
    #[command(flatten)]
    providers: ProviderArgs,
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    #[arg(long, default_value_t = kpeval::quality::DEFAULT_DOC_TOKEN_BUDGET)]
    doc_token_budget: usize,
    /// Drop predictions whose stems duplicate an earlier prediction.
    #[arg(long)]
    dedupe: bool,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    index_dir: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "jsonl,table")]
    format: Vec<FormatArg>,
    /// Record the wall-clock time in the report metadata.
    #[arg(long)]
    timestamp: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MetaEvalArgs {
    /// Machine-readable report, optionally as SYSTEM=PATH. Repeatable.
    #[arg(long = "report", required = true)]
    reports: Vec<String>,
    /// Human judgments JSONL (input_id, system_id, dimension, value).
    #[arg(long)]
    human: PathBuf,
    /// metric:dimension pairs to correlate. Repeatable.
    #[arg(long = "pair", required = true)]
    pairs: Vec<String>,
    #[arg(long, value_enum, default_value = "kendall")]
    stat: StatArg,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: usize,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write JSONL results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "bm25,dense")]
    retrievers: Vec<String>,
    #[command(flatten)]
    providers: ProviderArgs,
    #[arg(long, default_value_t = kpeval::quality::DEFAULT_DOC_TOKEN_BUDGET)]
    doc_token_budget: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagArgs {
    /// JSONL of {"phrase", "variant"} name-variation pairs.
    #[arg(long)]
    variations: PathBuf,
    /// Phrase list (one per line) for uniformity.
    #[arg(long, conflicts_with = "instances")]
    phrases: Option<PathBuf>,
    /// Take uniformity phrases from a dataset's references and predictions.
    #[arg(long)]
    instances: Option<PathBuf>,
    #[command(flatten)]
    providers: ProviderArgs,
    #[arg(long, default_value_t = DEFAULT_UNIFORMITY_PAIRS)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_retrievers(names: &[String]) -> Result<BTreeSet<RetrieverKind>> {
    names
        .iter()
        .map(|n| match n.trim() {
            "bm25" => Ok(RetrieverKind::Bm25),
            "dense" => Ok(RetrieverKind::Dense),
            "rerank" => Ok(RetrieverKind::Rerank),
            other => bail!("unknown retriever {other:?} (expected bm25, dense or rerank)"),
        })
        .collect()
}

fn eval(args: EvalArgs) -> Result<()> {
    let mut config = EvalConfig::new(&args.instances);
    config.corpus = args.corpus;
    config.system = args.system;
    if let Some(dims) = &args.dimensions {
        config.dimensions = dims
            .iter()
            .map(|d| Dimension::parse(d.trim()))
            .collect::<kpeval::Result<_>>()?;
    }
    config.baselines = !args.no_baselines;
    config.alpha = args.alpha;
    config.k = args.k;
    config.base = args.base;
    config.retrievers = parse_retrievers(&args.retrievers)?;
    config.embeddings = args.providers.source();
    config.scorer = match args.scorer {
        None => ScorerSource::None,
        Some(ScorerKind::Stub) => ScorerSource::Stub,
        Some(ScorerKind::Http) => ScorerSource::Http,
    };
    config.doc_token_budget = args.doc_token_budget;
    config.dedupe = args.dedupe;
    config.seed = args.seed;
    config.sidecar_url = args.providers.sidecar_url.clone();
    config.sidecar_token = args.providers.sidecar_token.clone();
    config.workers = args.workers;
    config.index_dir = args.index_dir;
    config.output_dir = args.out.clone();
    config.timestamp = args.timestamp;
    config.validate()?;

    let providers = Providers::from_config(&config)?;
    let report = run_eval(&config, &providers)?;
    let formats: Vec<ReportFormat> = args
        .format
        .iter()
        .map(|f| match f {
            FormatArg::Jsonl => ReportFormat::Machine,
            FormatArg::Table => ReportFormat::Table,
        })
        .collect();
    let written = emit_report(&report, &formats, &args.out)?;
    print!("{}", render_table(&report));
    for path in written {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn meta_eval(args: MetaEvalArgs) -> Result<()> {
    let mut systems = Vec::new();
    for spec in &args.reports {
        let (name, path) = match spec.split_once('=') {
            Some((name, path)) => (Some(name.to_string()), PathBuf::from(path)),
            None => (None, PathBuf::from(spec)),
        };
        let loaded = read_report(&path).with_context(|| format!("reading {}", path.display()))?;
        let name = name.unwrap_or(loaded.metadata.system);
        systems.push((name, loaded.per_document));
    }
    let config = MetaEvalConfig {
        systems,
        human: load_human_judgments(&args.human)?,
        pairs: args
            .pairs
            .iter()
            .map(|p| MetricPair::parse(p))
            .collect::<kpeval::Result<_>>()?,
        stat: match args.stat {
            StatArg::Pearson => CorrelationStat::Pearson,
            StatArg::Spearman => CorrelationStat::Spearman,
            StatArg::Kendall => CorrelationStat::Kendall,
        },
        n_resamples: args.resamples,
        level: args.level,
        seed: args.seed,
    };
    let rows = run_meta_eval(&config)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => {
            Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(std::io::stdout()),
    };
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

fn index(args: IndexArgs) -> Result<()> {
    let mut config = EvalConfig::new(&args.instances);
    config.corpus = args.corpus;
    config.dimensions = [Dimension::Utility].into_iter().collect();
    config.baselines = false;
    config.retrievers = parse_retrievers(&args.retrievers)?;
    config.embeddings = args.providers.source();
    config.doc_token_budget = args.doc_token_budget;
    config.sidecar_url = args.providers.sidecar_url.clone();
    config.sidecar_token = args.providers.sidecar_token.clone();
    // Reranking happens at query time; the cache only needs the dense side.
    if config.retrievers.remove(&RetrieverKind::Rerank) {
        config.retrievers.insert(RetrieverKind::Dense);
    }
    config.validate()?;
    for path in write_indexes(&config, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn diag(args: DiagArgs) -> Result<()> {
    let embedder = match args.providers.source() {
        EmbeddingSource::File { path } => Embedder::new(Box::new(FileProvider::load(&path)?)),
        EmbeddingSource::Http => {
            let url = args
                .providers
                .sidecar_url
                .as_deref()
                .context("--embeddings http needs KPEVAL_SIDECAR_URL")?;
            Embedder::new(Box::new(SidecarClient::new(
                url,
                args.providers.sidecar_token.clone(),
            )?))
        }
        EmbeddingSource::None => bail!("diag needs --embeddings-file or --embeddings http"),
    };
    let pairs = load_variation_pairs(&args.variations)?;
    let phrases: Vec<String> = match (&args.phrases, &args.instances) {
        (Some(path), _) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        (None, Some(path)) => load_dataset(path, None)?
            .instances
            .iter()
            .flat_map(|i| i.references.iter().chain(&i.predictions))
            .map(|p| p.raw().to_string())
            .collect(),
        (None, None) => bail!("diag needs --phrases or --instances for uniformity"),
    };
    let embedder = Arc::new(embedder);
    let result = run_diagnostics(&pairs, &phrases, &embedder, args.pairs, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::MetaEval(a) => meta_eval(a),
        Command::Index(a) => index(a),
        Command::Diag(a) => diag(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
