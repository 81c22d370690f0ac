//! TOML run configuration: benchmark source, run knobs and ablation
//! flags, provider mode (reference policy, scripted replay, or live
//! HTTP), and output locations. Secrets are named by environment
//! variable, never stored.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use magellan_core::backends::{
    CodeExecBackend, ExecLimits, FixtureCorpus, FixtureSearchBackend, LiveSearchBackend,
    LiveSearchConfig,
};
use magellan_core::kb::{kb_handle, KbHandle, KnowledgeBase};
use magellan_core::orchestrator::Engine;
use magellan_core::provider::hashed::{HashedTfEmbedding, HASHED_TF_ID};
use magellan_core::provider::{
    ChatHandle, EmbeddingHandle, HttpChatProvider, HttpEmbeddingProvider, HttpProviderConfig,
    ScriptEntry, ScriptedChatProvider,
};
use magellan_core::reflection::GradeMethod;
use magellan_core::router::{
    Distiller, ExtractiveDistiller, LlmDistiller, LlmRouter, Router, RuleRouter, CODE_EXEC_TOOL,
    WEB_SEARCH_TOOL,
};
use magellan_core::trace::{DirTraceSink, TraceSink};
use magellan_core::types::{RunConfig, Task, ToolDescription, ToolInputKind};

use crate::adapters::{self, TaskFormat};
use crate::error::CliError;
use crate::policy::ReferencePolicy;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSection {
    pub name: String,
    pub tasks: PathBuf,
    #[serde(default)]
    pub format: TaskFormat,
    #[serde(default = "default_grading")]
    pub grading: String,
    /// Fixture-mode web corpus; required unless `live = true`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub live: bool,
    /// Optional pre-built experience state (lessons from prior cases)
    /// used as the batch's starting point.
    #[serde(default)]
    pub experience: Option<PathBuf>,
}

fn default_grading() -> String {
    "exact_match".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProviderSection {
    #[serde(default)]
    pub mode: ProviderMode,
    /// Replay mode: JSON file with `chat` and `router` script entries.
    #[serde(default)]
    pub replay_script: Option<PathBuf>,
    #[serde(default)]
    pub chat_endpoint: Option<String>,
    #[serde(default)]
    pub chat_model: Option<String>,
    #[serde(default)]
    pub chat_api_key_env: Option<String>,
    #[serde(default)]
    pub embedding_endpoint: Option<String>,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub embedding_api_key_env: Option<String>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub temperature: Option<f64>,
}

fn default_embedding_dim() -> usize {
    1024
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    #[default]
    Reference,
    Replay,
    Live,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchSection {
    pub endpoint: Option<String>,
    pub key_env: Option<String>,
    #[serde(default)]
    pub params: Vec<(String, String)>,
    pub reader_endpoint: Option<String>,
    pub reader_key_env: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Replay fixture: scripts for the central agent and the router agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayScript {
    pub chat: Vec<ScriptEntry>,
    #[serde(default)]
    pub router: Vec<ScriptEntry>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: FileConfig = toml::from_str(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((config, base))
    }

    fn resolve(base: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    }

    pub fn grade_method(&self) -> Result<GradeMethod, CliError> {
        match self.benchmark.grading.as_str() {
            "exact_match" => Ok(GradeMethod::ExactMatch),
            "llm_equivalence" => Ok(GradeMethod::LlmEquivalence),
            other => Err(CliError::Config(format!(
                "unknown grading method {other:?}"
            ))),
        }
    }

    pub fn load_tasks(&self, base: &Path) -> Result<Vec<Task>, CliError> {
        let path = Self::resolve(base, &self.benchmark.tasks);
        adapters::load_tasks(&path, self.benchmark.format)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.benchmark.live {
            if self.provider.mode != ProviderMode::Live {
                return Err(CliError::Config(
                    "live benchmark requires provider.mode = \"live\"".into(),
                ));
            }
        } else if self.benchmark.corpus.is_none() {
            return Err(CliError::Config(
                "fixture mode requires benchmark.corpus".into(),
            ));
        }
        match self.provider.mode {
            ProviderMode::Live => {
                for (field, value) in [
                    ("provider.chat_endpoint", &self.provider.chat_endpoint),
                    ("provider.chat_model", &self.provider.chat_model),
                ] {
                    if value.is_none() {
                        return Err(CliError::Config(format!("live mode requires {field}")));
                    }
                }
                if let Some(var) = &self.provider.chat_api_key_env {
                    if std::env::var(var).is_err() {
                        return Err(CliError::Config(format!(
                            "environment variable {var} is not set"
                        )));
                    }
                }
            }
            ProviderMode::Replay => {
                if self.provider.replay_script.is_none() {
                    return Err(CliError::Config(
                        "replay mode requires provider.replay_script".into(),
                    ));
                }
            }
            ProviderMode::Reference => {}
        }
        self.run
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Everything assembled and ready to run.
pub struct BuiltEngine {
    pub engine: Engine,
    pub tasks: Vec<Task>,
    pub grade_method: GradeMethod,
    pub grade_provider: Option<ChatHandle>,
    pub initial_experience: magellan_core::types::ExperienceState,
    pub out_dir: PathBuf,
    pub kb_dir: PathBuf,
}

/// Builds the engine from a validated config. `out_dir` (flag) overrides
/// the config's output section; the knowledge base and traces live under
/// it and start fresh for reproducibility.
pub fn build_engine(
    config: &FileConfig,
    base: &Path,
    run_override: RunConfig,
    out_dir: Option<PathBuf>,
) -> Result<BuiltEngine, CliError> {
    let mut config = config.clone();
    config.run = run_override;
    config.validate()?;

    let out_dir = out_dir
        .or(config
            .output
            .dir
            .clone()
            .map(|d| FileConfig::resolve(base, &d)))
        .unwrap_or_else(|| PathBuf::from("magellan-out"));
    let traces_dir = out_dir.join("traces");
    let kb_dir = out_dir.join("kb");
    if out_dir.exists() {
        // Fresh run directory: stale traces or store contents would make
        // reports depend on earlier invocations. Only directories that
        // look like previous runs are cleared.
        let is_run_dir = out_dir.join("report.json").exists()
            || out_dir.join("ablate.json").exists()
            || out_dir.join("traces").exists()
            || out_dir.join("kb").exists()
            || std::fs::read_dir(&out_dir)
                .map(|mut d| d.next().is_none())
                .unwrap_or(false);
        if !is_run_dir {
            return Err(CliError::Config(format!(
                "output directory {} exists and does not look like a previous run; \
                 refusing to clear it",
                out_dir.display()
            )));
        }
        std::fs::remove_dir_all(&out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot clear {}: {e}", out_dir.display())))?;
    }
    std::fs::create_dir_all(&kb_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", kb_dir.display())))?;

    let tasks = config.load_tasks(base)?;
    let grade_method = config.grade_method()?;
    let initial_experience = match &config.benchmark.experience {
        None => magellan_core::types::ExperienceState::initial(),
        Some(path) => {
            let path = FileConfig::resolve(base, path);
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let state: magellan_core::types::ExperienceState = serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            state
                .validate(config.run.lesson_body_cap)
                .map_err(|e| CliError::Config(e.to_string()))?;
            state
        }
    };

    // Providers.
    let (chat, router, distiller, embedder, embedder_id): (
        ChatHandle,
        Arc<dyn Router>,
        Arc<dyn Distiller>,
        EmbeddingHandle,
        String,
    ) = match config.provider.mode {
        ProviderMode::Reference => (
            Arc::new(ReferencePolicy::new()),
            Arc::new(RuleRouter::new(config.run.fanout_cap)),
            Arc::new(ExtractiveDistiller),
            Arc::new(HashedTfEmbedding::new()),
            HASHED_TF_ID.to_string(),
        ),
        ProviderMode::Replay => {
            let script_path =
                FileConfig::resolve(base, config.provider.replay_script.as_ref().unwrap());
            let raw = std::fs::read_to_string(&script_path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", script_path.display()))
            })?;
            let script: ReplayScript = serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", script_path.display())))?;
            let chat: ChatHandle = Arc::new(ScriptedChatProvider::new(script.chat));
            let router: Arc<dyn Router> = if script.router.is_empty() {
                Arc::new(RuleRouter::new(config.run.fanout_cap))
            } else {
                Arc::new(LlmRouter::new(
                    Arc::new(ScriptedChatProvider::new(script.router)),
                    config.run.fanout_cap,
                ))
            };
            (
                chat,
                router,
                Arc::new(ExtractiveDistiller),
                Arc::new(HashedTfEmbedding::new()),
                HASHED_TF_ID.to_string(),
            )
        }
        ProviderMode::Live => {
            let mut chat_config = HttpProviderConfig::new(
                config.provider.chat_endpoint.clone().unwrap(),
                config.provider.chat_model.clone().unwrap(),
            );
            chat_config.api_key_env = config.provider.chat_api_key_env.clone();
            chat_config.temperature = config.provider.temperature;
            let chat: ChatHandle = Arc::new(HttpChatProvider::new(chat_config));
            let (embedder, embedder_id): (EmbeddingHandle, String) = match (
                &config.provider.embedding_endpoint,
                &config.provider.embedding_model,
            ) {
                (Some(endpoint), Some(model)) => {
                    let mut embed_config = HttpProviderConfig::new(endpoint, model);
                    embed_config.api_key_env = config.provider.embedding_api_key_env.clone();
                    (
                        Arc::new(HttpEmbeddingProvider::new(
                            embed_config,
                            config.provider.embedding_dim,
                        )),
                        format!("http/{model}"),
                    )
                }
                _ => (Arc::new(HashedTfEmbedding::new()), HASHED_TF_ID.to_string()),
            };
            (
                Arc::clone(&chat),
                Arc::new(LlmRouter::new(Arc::clone(&chat), config.run.fanout_cap)),
                Arc::new(LlmDistiller::new(Arc::clone(&chat))),
                embedder,
                embedder_id,
            )
        }
    };

    // Tool registry: web search + code execution. kb_retrieve joins only
    // at the post-warm-up barrier inside the engine.
    let mut registry = magellan_core::router::ToolRegistry::new();
    let search_backend: Arc<dyn magellan_core::backends::ToolBackend> = if config.benchmark.live {
        let search = &config.search;
        let endpoint = search
            .endpoint
            .clone()
            .ok_or_else(|| CliError::Config("live mode requires search.endpoint".into()))?;
        let reader = search
            .reader_endpoint
            .clone()
            .ok_or_else(|| CliError::Config("live mode requires search.reader_endpoint".into()))?;
        Arc::new(LiveSearchBackend::new(LiveSearchConfig {
            search_endpoint: endpoint,
            search_key_env: search.key_env.clone(),
            search_params: search.params.clone(),
            reader_endpoint: reader,
            reader_key_env: search.reader_key_env.clone(),
            timeout: Duration::from_secs(60),
            top_n: config.run.search_top_n,
        }))
    } else {
        let corpus_path = FileConfig::resolve(base, config.benchmark.corpus.as_ref().unwrap());
        let corpus =
            FixtureCorpus::load(&corpus_path).map_err(|e| CliError::Config(e.to_string()))?;
        Arc::new(FixtureSearchBackend::new(
            Arc::new(corpus),
            config.run.search_top_n,
        ))
    };
    registry
        .register(
            ToolDescription::new(
                WEB_SEARCH_TOOL,
                "search the web and fetch matching pages as text",
                ToolInputKind::FreeTextQuery,
            ),
            search_backend,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    registry
        .register(
            ToolDescription::new(
                CODE_EXEC_TOOL,
                "run a python snippet in a sandbox and capture its output",
                ToolInputKind::CodeSnippet,
            ),
            Arc::new(CodeExecBackend::new(ExecLimits {
                wall_time: Duration::from_millis(config.run.exec_wall_time_ms),
                output_bytes: config.run.exec_output_bytes,
            })),
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    // Knowledge base with crash-safe append log.
    let mut kb = KnowledgeBase::new(Arc::clone(&embedder), embedder_id);
    kb.attach_log(kb_dir.join(magellan_core::kb::RECORD_LOG_FILE));
    let kb: KbHandle = kb_handle(kb);

    let trace: Arc<dyn TraceSink> = Arc::new(
        DirTraceSink::new(&traces_dir).map_err(|e| CliError::Runtime(format!("trace dir: {e}")))?,
    );

    let grade_provider = match config.provider.mode {
        ProviderMode::Live => Some(Arc::clone(&chat)),
        _ => None,
    };

    let engine = Engine::new(
        config.run.clone(),
        chat,
        router,
        distiller,
        registry,
        kb,
        trace,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    Ok(BuiltEngine {
        engine,
        tasks,
        grade_method,
        grade_provider,
        initial_experience,
        out_dir,
        kb_dir,
    })
}
