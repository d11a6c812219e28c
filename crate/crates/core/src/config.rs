//! Runtime configuration: one TOML file, with provider endpoints and the
//! admin token also settable from the environment.
//!
//! Every section is optional. A missing key takes its default, an unknown
//! key is an error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, CutoffTable, ScoreRuleTable};
use crate::engine::{Engine, EngineConfig};
use crate::eval::EvalOptions;
use crate::generate::{GroundedMockProvider, HttpChatProvider, HttpLlmConfig, LlmProvider};
use crate::index::{Bm25Params, EmbeddingProvider, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, IndexSet};
use crate::ingest::{IngestConfig, SimpleTokenizer, Tokenizer};
use crate::retrieve::{Bm25RatioScorer, LlmScorer, OverlapScorer, RerankScorer};
use crate::telemetry::PriceSheet;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Table(#[from] AgentError),
    #[error("index was built with embedder {index:?} but the configured embedder is {configured:?}")]
    EmbedderMismatch { index: String, configured: String },
}

/// Which relevance scorer the re-rank stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankerKind {
    /// Offline BM25-ratio scorer; needs no model.
    #[default]
    Bm25Ratio,
    /// Jaccard token overlap.
    Overlap,
    /// The chat model as a relevance judge.
    Llm,
}

/// Rule and cut-off tables. Unset paths fall back to the bundled tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TablePaths {
    pub rules: Option<PathBuf>,
    pub cutoffs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Session logs, the interaction log and the live index snapshot.
    pub data_dir: PathBuf,
    /// Sources re-read by the admin ingest route.
    pub corpus: Option<PathBuf>,
    pub faq: Option<PathBuf>,
    /// Bearer token for admin and verdict routes. Those routes are refused
    /// when it is unset.
    pub admin_token: Option<String>,
    pub session_idle_hours: i64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            corpus: None,
            faq: None,
            admin_token: None,
            session_idle_hours: crate::session::DEFAULT_IDLE_HOURS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let d = EvalOptions::default();
        Self { seed: d.seed, workers: d.workers }
    }
}

impl EvalSettings {
    pub fn options(&self) -> EvalOptions {
        EvalOptions { seed: self.seed, workers: self.workers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub ingest: IngestConfig,
    pub bm25: Bm25Params,
    pub engine: EngineConfig,
    pub reranker: RerankerKind,
    pub tables: TablePaths,
    /// USD per million tokens, keyed by model name.
    pub prices: PriceSheet,
    pub llm: Option<HttpLlmConfig>,
    pub embed: Option<HttpEmbedderConfig>,
    pub service: ServiceConfig,
    pub eval: EvalSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            ingest: IngestConfig::default(),
            bm25: Bm25Params::default(),
            engine: EngineConfig::default(),
            reranker: RerankerKind::default(),
            tables: TablePaths::default(),
            prices: PriceSheet::default().with("gpt-4o-mini", 0.15, 0.60).with("gpt-4o", 2.50, 10.00),
            llm: None,
            embed: None,
            service: ServiceConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file. Relative table and service paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.tables.rules, &mut self.tables.cutoffs, &mut self.service.corpus, &mut self.service.faq]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.service.data_dir);
    }

    /// Applies `LLM_BASE_URL`, `LLM_MODEL`, `LLM_API_KEY`, `EMBED_BASE_URL`,
    /// `EMBED_MODEL` and `ADMITQA_ADMIN_TOKEN` from `lookup`. An endpoint is
    /// only created when both its URL and model are known.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let key = lookup("LLM_API_KEY");
        match (&mut self.llm, lookup("LLM_BASE_URL"), lookup("LLM_MODEL")) {
            (Some(llm), url, model) => {
                llm.base_url = url.unwrap_or(std::mem::take(&mut llm.base_url));
                llm.model = model.unwrap_or(std::mem::take(&mut llm.model));
            }
            (None, Some(base_url), Some(model)) => {
                self.llm = Some(HttpLlmConfig { base_url, model, api_key: None, timeout_secs: 60 });
            }
            _ => {}
        }
        match (&mut self.embed, lookup("EMBED_BASE_URL"), lookup("EMBED_MODEL")) {
            (Some(e), url, model) => {
                e.base_url = url.unwrap_or(std::mem::take(&mut e.base_url));
                e.model = model.unwrap_or(std::mem::take(&mut e.model));
            }
            (None, Some(base_url), Some(model)) => {
                self.embed = Some(HttpEmbedderConfig { base_url, model, api_key: None, timeout_secs: 30 });
            }
            _ => {}
        }
        if let Some(k) = key {
            if let Some(llm) = &mut self.llm {
                llm.api_key = Some(k.clone());
            }
            if let Some(e) = &mut self.embed {
                e.api_key = Some(k);
            }
        }
        if let Some(t) = lookup("ADMITQA_ADMIN_TOKEN") {
            self.service.admin_token = Some(t);
        }
    }

    pub fn from_process_env(mut self) -> Self {
        self.apply_env(|k| std::env::var(k).ok().filter(|v| !v.is_empty()));
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let r = &self.engine.retrieve;
        if r.k_dense == 0 || r.k_keyword == 0 || r.keep == 0 {
            return bad("retrieve k_dense, k_keyword and keep must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&r.faq_threshold) || !(0.0..=1.0).contains(&r.min_relevance) {
            return bad("retrieve thresholds must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.ingest.dedup_threshold) {
            return bad("ingest dedup_threshold must lie in [0, 1]".into());
        }
        if self.bm25.k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25.b) {
            return bad("bm25 needs k1 >= 0 and b in [0, 1]".into());
        }
        self.engine.generate.params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.engine.context_budget == 0 {
            return bad("engine context_budget must be positive".into());
        }
        if self.eval.workers == 0 {
            return bad("eval workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn rules(&self) -> Result<ScoreRuleTable, ConfigError> {
        Ok(match &self.tables.rules {
            Some(p) => ScoreRuleTable::load(p)?,
            None => crate::fixture::rules(),
        })
    }

    pub fn cutoffs(&self) -> Result<CutoffTable, ConfigError> {
        Ok(match &self.tables.cutoffs {
            Some(p) => CutoffTable::load(p)?,
            None => crate::fixture::cutoffs(),
        })
    }

    /// The HTTP embedder when one is configured, else the hashing embedder.
    pub fn embedder(&self) -> Arc<dyn EmbeddingProvider> {
        match &self.embed {
            Some(e) => Arc::new(HttpEmbedder::new(e.clone())),
            None => Arc::new(HashEmbedder::default()),
        }
    }

    /// The configured chat endpoint, or the offline grounded mock.
    pub fn provider(&self) -> Arc<dyn LlmProvider> {
        match &self.llm {
            Some(l) => Arc::new(HttpChatProvider::new(l.clone())),
            None => Arc::new(GroundedMockProvider::default()),
        }
    }

    /// Builds the engine over `index`. The index must have been embedded by
    /// the configured embedder.
    pub fn engine(&self, index: Arc<IndexSet>, provider: Arc<dyn LlmProvider>) -> Result<Engine, ConfigError> {
        let embedder = self.embedder();
        if index.embedder_name() != embedder.name() {
            return Err(ConfigError::EmbedderMismatch {
                index: index.embedder_name().into(),
                configured: embedder.name().into(),
            });
        }
        let tokenizer: Arc<dyn Tokenizer> = Arc::new(SimpleTokenizer);
        let scorer: Arc<dyn RerankScorer> = match self.reranker {
            RerankerKind::Bm25Ratio => Arc::new(Bm25RatioScorer::new(index.clone(), tokenizer.clone())),
            RerankerKind::Overlap => Arc::new(OverlapScorer::new(tokenizer.clone())),
            RerankerKind::Llm => Arc::new(LlmScorer::new(provider.clone())),
        };
        Ok(Engine::new(
            index,
            embedder,
            tokenizer,
            scorer,
            provider,
            Arc::new(self.rules()?),
            Arc::new(self.cutoffs()?),
            self.engine.clone(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn example_config_at_the_repo_root_parses() {
        let cfg = AppConfig::from_toml(include_str!("../../../admitqa.example.toml")).unwrap();
        assert_eq!(cfg.prices, AppConfig::default().prices);
        assert_eq!(cfg.engine, EngineConfig::default());
        assert!(cfg.service.corpus.is_some());
    }

    #[test]
    fn nested_typos_are_rejected() {
        assert!(AppConfig::from_toml("[engine.retrieve]\nkeep_n = 2").is_err());
        assert!(AppConfig::from_toml("[ingest.chunk]\nsise = 400").is_err());
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(AppConfig::from_toml("").unwrap(), AppConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = AppConfig::from_toml(
            "[ingest.chunk]\nsize = 300\n\n[engine.retrieve]\nkeep = 3\n\n[prices.local]\ninput = 0.0\noutput = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.ingest.chunk.size, 300);
        assert_eq!(cfg.ingest.chunk.stride, 100);
        assert_eq!(cfg.engine.retrieve.keep, 3);
        assert_eq!(cfg.engine.retrieve.k_dense, 15);
        assert!(cfg.prices.price("local").is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(AppConfig::from_toml("colour = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(AppConfig::from_toml("[engine.retrieve]\nkeep = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(AppConfig::from_toml("[bm25]\nb = 1.5"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn env_creates_and_overrides_endpoints() {
        let env: HashMap<&str, &str> = [
            ("LLM_BASE_URL", "http://llm"),
            ("LLM_MODEL", "m"),
            ("LLM_API_KEY", "k"),
            ("EMBED_BASE_URL", "http://emb"),
        ]
        .into();
        let mut cfg = AppConfig::default();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string()));
        let llm = cfg.llm.as_ref().unwrap();
        assert_eq!((llm.base_url.as_str(), llm.model.as_str(), llm.api_key.as_deref()), ("http://llm", "m", Some("k")));
        // URL without a model is not enough for an endpoint.
        assert!(cfg.embed.is_none());

        let mut cfg = AppConfig::from_toml("[llm]\nbase_url = \"http://file\"\nmodel = \"a\"\n").unwrap();
        cfg.apply_env(|k| (k == "LLM_MODEL").then(|| "b".to_string()));
        let llm = cfg.llm.unwrap();
        assert_eq!((llm.base_url.as_str(), llm.model.as_str()), ("http://file", "b"));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("admitqa.toml");
        std::fs::write(&path, "[tables]\nrules = \"rules.json\"\n[service]\ndata_dir = \"state\"\n").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.tables.rules.unwrap(), dir.path().join("rules.json"));
        assert_eq!(cfg.service.data_dir, dir.path().join("state"));
    }

    #[test]
    fn engine_checks_the_embedder() {
        let index = Arc::new(IndexSet::empty("other-embedder"));
        let provider = Arc::new(GroundedMockProvider::default());
        let err = AppConfig::default().engine(index, provider).err().unwrap();
        assert!(matches!(err, ConfigError::EmbedderMismatch { .. }));
    }
}
