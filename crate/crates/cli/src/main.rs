use std::path::{Path, PathBuf};
use std::sync::Arc;

use admitqa::config::AppConfig;
use admitqa::engine::{Engine, PipelineMode, TurnContext};
use admitqa::eval::{read_items, run_eval, EvalOptions};
use admitqa::generate::{GroundedMockProvider, HttpChatProvider, LlmProvider};
use admitqa::index::IndexSet;
use admitqa::retrieve::RetrievalMode;
use admitqa::service::{build_index, ChatService};
use admitqa_server::AppState;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Admissions question answering over a cited corpus.
#[derive(Debug, Parser)]
#[command(name = "admitqa", version)]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true, env = "ADMITQA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean, chunk and index a corpus, writing a snapshot to `--out`.
    Ingest {
        #[command(flatten)]
        sources: Sources,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        dedup_threshold: Option<f64>,
    },
    /// Snapshot maintenance and raw candidate lookups.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Retrieve and re-rank passages for one question.
    Query {
        /// Snapshot directory; the bundled fixture corpus when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        question: String,
        #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
        mode: Mode,
        /// Also generate an answer with the configured model.
        #[arg(long)]
        answer: bool,
    },
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Run the HTTP API.
    Serve {
        /// Overrides `service.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Sources {
    /// Documents, JSON lines.
    #[arg(long)]
    corpus: PathBuf,
    /// FAQ pairs, JSON lines.
    #[arg(long)]
    faq: PathBuf,
}

#[derive(Debug, Subcommand)]
enum IndexAction {
    /// Build a snapshot and print its manifest.
    Build {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        sources: Sources,
    },
    /// Print the merged dense and keyword candidates from a snapshot.
    Query {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
        mode: Mode,
    },
}

#[derive(Debug, Subcommand)]
enum EvalAction {
    Run {
        #[arg(long)]
        items: PathBuf,
        /// Comma-separated: llm_only, rag_rerank, hybrid.
        #[arg(long, value_delimiter = ',', default_value = "llm_only,rag_rerank,hybrid")]
        configs: Vec<PipelineMode>,
        #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
        provider: ProviderKind,
        /// Snapshot directory; the bundled fixture corpus when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Hybrid,
    Dense,
    Keyword,
}

impl From<Mode> for RetrievalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Hybrid => RetrievalMode::Hybrid,
            Mode::Dense => RetrievalMode::Dense,
            Mode::Keyword => RetrievalMode::Keyword,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    }
    .from_process_env();

    match cli.command {
        Command::Ingest { sources, out, chunk_size, stride, dedup_threshold } => {
            if let Some(v) = chunk_size {
                cfg.ingest.chunk.size = v;
            }
            if let Some(v) = stride {
                cfg.ingest.chunk.stride = v;
            }
            if let Some(v) = dedup_threshold {
                cfg.ingest.dedup_threshold = v;
            }
            cfg.validate()?;
            let (report, index) = build_index(&cfg, &sources.corpus, &sources.faq)?;
            index.save_snapshot(&out).with_context(|| format!("writing snapshot to {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Index { action: IndexAction::Build { dir, sources } } => {
            let (_, index) = build_index(&cfg, &sources.corpus, &sources.faq)?;
            let manifest = index.save_snapshot(&dir)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
        Command::Index { action: IndexAction::Query { dir, question, mode } } => {
            let engine = engine(&cfg, Some(&dir), cfg.provider())?;
            let pool = engine.retriever().candidates(&question, mode.into())?;
            for c in pool {
                println!("{}\tdense={}\tkeyword={}\t{}", c.id, score(c.dense_score), score(c.keyword_score), preview(&c.text));
            }
        }
        Command::Query { index, question, mode, answer } => {
            let engine = engine(&cfg, index.as_deref(), cfg.provider())?;
            let out = engine.retriever().retrieve(&question, mode.into(), engine.scorer().as_ref())?;
            for p in &out.passages {
                println!("{}. {}\t{:.4}\t{}", p.rank, p.id, p.relevance, preview(&p.text));
            }
            if out.passages.is_empty() {
                println!("no passage passed the relevance floor");
            }
            if answer {
                let pipeline = if mode == Mode::Hybrid { PipelineMode::Hybrid } else { PipelineMode::RagRerank };
                let o = engine.answer(&question, &TurnContext::default(), pipeline, &mut |_| {})?;
                println!("\n[{:?}/{:?}] {}", o.agent, o.kind, o.text);
            }
        }
        Command::Eval { action: EvalAction::Run { items, configs, provider, index, out, seed, workers } } => {
            let provider: Arc<dyn LlmProvider> = match provider {
                ProviderKind::Mock => Arc::new(GroundedMockProvider::default()),
                ProviderKind::Http => match &cfg.llm {
                    Some(l) => Arc::new(HttpChatProvider::new(l.clone())),
                    None => bail!("--provider http needs [llm] in the config or LLM_BASE_URL and LLM_MODEL"),
                },
            };
            let engine = engine(&cfg, index.as_deref(), provider)?;
            let items = read_items(&items)?;
            let defaults = cfg.eval.options();
            let opts = EvalOptions { seed: seed.unwrap_or(defaults.seed), workers: workers.unwrap_or(defaults.workers) };
            let (report, timings) = run_eval(&items, &configs, &engine, opts)?;
            report.write(&timings, &out)?;
            print!("{}", report.to_table());
        }
        Command::Serve { bind } => {
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            serve(cfg)?;
        }
    }
    Ok(())
}

/// Engine over a snapshot, or over the fixture corpus when `dir` is `None`.
fn engine(cfg: &AppConfig, dir: Option<&Path>, provider: Arc<dyn LlmProvider>) -> Result<Engine> {
    let index = match dir {
        Some(d) => IndexSet::load_snapshot(d).with_context(|| format!("loading snapshot {}", d.display()))?,
        None => admitqa::fixture::index(),
    };
    Ok(cfg.engine(Arc::new(index), provider)?)
}

/// Loads `data_dir/index` if present, else builds from the configured corpus.
fn serve(cfg: AppConfig) -> Result<()> {
    let snapshot = cfg.service.data_dir.join("index");
    let index = if snapshot.join("manifest.json").exists() {
        IndexSet::load_snapshot(&snapshot)?
    } else if let (Some(corpus), Some(faq)) = (&cfg.service.corpus, &cfg.service.faq) {
        let (report, index) = build_index(&cfg, corpus, faq)?;
        tracing::info!(?report, "ingested corpus");
        index.save_snapshot(&snapshot)?;
        index
    } else {
        tracing::warn!("no snapshot or corpus configured; serving the bundled fixture");
        admitqa::fixture::index()
    };
    let engine = cfg.engine(Arc::new(index), cfg.provider())?;
    let service = ChatService::open(&cfg, engine)?;
    let bind = cfg.service.bind.clone();
    let state = AppState::new(service, cfg);
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
        admitqa_server::serve(listener, state).await?;
        Ok(())
    })
}

fn score(s: Option<f64>) -> String {
    s.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn preview(text: &str) -> String {
    let mut s: String = text.chars().take(90).collect();
    if s.len() < text.len() {
        s.push('…');
    }
    s
}
