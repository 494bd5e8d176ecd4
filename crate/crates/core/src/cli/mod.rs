//! The `q2d` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Settings resolve as flags, then the `--config` JSON file, then defaults;
//! the effective configuration is written into each run's manifest.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filter::{FilterConfig, LeakScope};
use crate::llm::{BackendKind, LmBackendConfig};
use crate::scoring::{ProviderKind, ScoreProviderConfig};

pub use manifest::RunManifest;

/// Environment variable naming the scoring service (embeddings and NLI).
pub const SCORING_URL_ENV: &str = "Q2D_SCORING_URL";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "q2d",
    version,
    about = "Generate, filter and evaluate question-to-dialog datasets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Turn a QA file into scored dialog samples.
    Generate(GenerateArgs),
    /// Re-apply (and optionally re-score) filters on a samples file.
    Filter(FilterCmdArgs),
    /// Sweep the intent-similarity threshold over a samples file.
    Ablate(AblateArgs),
    /// Evaluate predicted queries against gold queries.
    Eval(EvalArgs),
    /// Score response factuality with an NLI service.
    Factuality(FactualityArgs),
    /// Copy samples, optionally only the retained ones.
    Export(ExportArgs),
    /// Replace assistant turns with generated responses.
    Regenerate(RegenerateArgs),
}

#[derive(Debug, Args, Default)]
pub struct LmArgs {
    /// Completion backend: echo, replay or http.
    #[arg(long)]
    pub backend: Option<String>,
    /// HTTP completion endpoint.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Recorded completions served in replay mode.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Append live completions to this file (and serve repeats from it).
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Maximum concurrent in-flight requests to the HTTP backend.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ScorerArgs {
    /// Embedding provider: builtin_hash or remote.
    #[arg(long, value_parser = parse_provider)]
    pub scorer: Option<ProviderKind>,
    /// Scoring service base URL (default: $Q2D_SCORING_URL).
    #[arg(long)]
    pub scorer_url: Option<String>,
    /// JSON-lines score cache.
    #[arg(long)]
    pub score_cache: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct FilterArgs {
    /// Minimum similarity between question and reversed question.
    #[arg(long)]
    pub t_query: Option<f64>,
    /// Maximum answer-token recall within the dialog.
    #[arg(long)]
    pub t_answer: Option<f64>,
    /// Maximum similarity between the last user turn and the question.
    #[arg(long)]
    pub t_last_turn: Option<f64>,
    /// Enable the NLI intent filter.
    #[arg(long)]
    pub nli: bool,
    #[arg(long)]
    pub t_nli: Option<f64>,
    /// Turns inspected for answer leaks: all_turns or assistant_turns.
    #[arg(long, value_parser = parse_leak_scope)]
    pub leak_scope: Option<LeakScope>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Filter report (default: <out>.report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run manifest (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Forward (question → dialog) sampling temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from --checkpoint instead of starting over.
    #[arg(long, requires = "checkpoint")]
    pub resume: bool,
    /// Reserved; sampling happens server-side and the pipeline has no
    /// randomness of its own.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FilterCmdArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Recompute scores instead of re-using the stored ones.
    #[arg(long)]
    pub rescore: bool,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated ascending thresholds.
    #[arg(long, default_value = "0,0.25,0.5,0.75,0.8,0.9,0.95,0.99,0.999")]
    pub thresholds: String,
    /// JSON output (default: <in>.ablation.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, conflicts_with = "search_live")]
    pub search_fixtures: Option<PathBuf>,
    /// Query a live search API (key in $Q2D_SEARCH_API_KEY).
    #[arg(long)]
    pub search_live: bool,
    #[arg(long, default_value = crate::eval::DEFAULT_SEARCH_ENDPOINT)]
    pub search_endpoint: String,
    /// Append live pages to this fixture file.
    #[arg(long, requires = "search_live")]
    pub search_record: Option<PathBuf>,
    /// Minimum spacing between live search requests.
    #[arg(long, default_value_t = 1000)]
    pub search_interval_ms: u64,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Report JSON (default: <pred>.report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-record metrics (default: <pred>.breakdown.jsonl).
    #[arg(long)]
    pub breakdown: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FactualityArgs {
    /// Dialog records (any JSON-lines with "id" and "dialog").
    #[arg(long)]
    pub dialogs: PathBuf,
    /// Second response set to compare against --dialogs.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Grounding documents: {"id":..,"document":..} lines.
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// NLI service base URL (default: $Q2D_SCORING_URL).
    #[arg(long)]
    pub nli_endpoint: Option<String>,
    #[arg(long)]
    pub score_cache: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub retained_only: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegenerateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub lm: LmArgs,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn parse_provider(s: &str) -> std::result::Result<ProviderKind, String> {
    match s {
        "builtin" | "builtin_hash" => Ok(ProviderKind::BuiltinHash),
        "remote" => Ok(ProviderKind::Remote),
        _ => Err(format!("unknown scorer {s:?} (expected builtin_hash or remote)")),
    }
}

fn parse_leak_scope(s: &str) -> std::result::Result<LeakScope, String> {
    match s {
        "all_turns" | "all" => Ok(LeakScope::AllTurns),
        "assistant_turns" | "assistant" => Ok(LeakScope::AssistantTurns),
        _ => Err(format!("unknown leak scope {s:?}")),
    }
}

/// Optional settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub endpoint: Option<String>,
    pub replay: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub scorer: Option<ProviderKind>,
    pub scorer_url: Option<String>,
    pub score_cache: Option<PathBuf>,
    pub filters: Option<FilterConfig>,
    pub temperature: Option<f64>,
    pub concurrency: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

impl LmArgs {
    fn resolve(&self, file: &FileConfig) -> Result<LmBackendConfig> {
        let kind: BackendKind = self
            .backend
            .as_deref()
            .or(file.backend.as_deref())
            .ok_or_else(|| Error::Config("--backend is required".into()))?
            .parse()?;
        let mut cfg = match kind {
            BackendKind::Echo => LmBackendConfig::echo(),
            BackendKind::Replay => LmBackendConfig::replay(
                self.replay
                    .clone()
                    .or_else(|| file.replay.clone())
                    .ok_or_else(|| Error::Config("--backend replay needs --replay".into()))?,
            ),
            BackendKind::Http => LmBackendConfig::http(
                self.endpoint
                    .clone()
                    .or_else(|| file.endpoint.clone())
                    .ok_or_else(|| Error::Config("--backend http needs --endpoint".into()))?,
            ),
        };
        cfg.record_path = self.record.clone().or_else(|| file.record.clone());
        if let Some(n) = self.max_in_flight.or(file.max_in_flight) {
            cfg.max_in_flight = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScorerArgs {
    fn resolve(&self, file: &FileConfig) -> Result<ScoreProviderConfig> {
        let kind = self.scorer.or(file.scorer).unwrap_or_default();
        let endpoint = self
            .scorer_url
            .clone()
            .or_else(|| file.scorer_url.clone())
            .or_else(|| std::env::var(SCORING_URL_ENV).ok().filter(|s| !s.is_empty()));
        let cfg = ScoreProviderConfig {
            kind,
            endpoint: if kind == ProviderKind::Remote { endpoint } else { None },
            cache_path: self.score_cache.clone().or_else(|| file.score_cache.clone()),
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FilterArgs {
    fn resolve(&self, file: &FileConfig) -> Result<FilterConfig> {
        let mut cfg = file.filters.clone().unwrap_or_default();
        if let Some(t) = self.t_query {
            cfg.t_query = t;
        }
        if let Some(t) = self.t_answer {
            cfg.t_answer = t;
        }
        if let Some(t) = self.t_last_turn {
            cfg.t_last_turn = t;
        }
        if let Some(t) = self.t_nli {
            cfg.t_nli = t;
        }
        if let Some(s) = self.leak_scope {
            cfg.leak_scope = s;
        }
        cfg.nli_enabled |= self.nli;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Filter(a) => commands::filter(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Factuality(a) => commands::factuality(a),
        Command::Export(a) => commands::export(a),
        Command::Regenerate(a) => commands::regenerate(a),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("q2d: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig {
            filters: Some(FilterConfig {
                t_query: 0.5,
                t_answer: 0.3,
                ..Default::default()
            }),
            ..Default::default()
        };
        let flags = FilterArgs {
            t_query: Some(0.9),
            ..Default::default()
        };
        let cfg = flags.resolve(&file).unwrap();
        assert_eq!((cfg.t_query, cfg.t_answer), (0.9, 0.3));
        let defaults = FilterArgs::default().resolve(&FileConfig::default()).unwrap();
        assert_eq!(defaults, FilterConfig::default());
    }

    #[test]
    fn unknown_backend_is_config_error() {
        let a = LmArgs {
            backend: Some("grpc".into()),
            ..Default::default()
        };
        let err = a.resolve(&FileConfig::default()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert!(err.to_string().contains("grpc"));
    }

    #[test]
    fn bad_threshold_is_config_error() {
        let a = FilterArgs {
            t_answer: Some(2.0),
            ..Default::default()
        };
        assert_eq!(exit_code(&a.resolve(&FileConfig::default()).unwrap_err()), EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero_and_garbage_exits_two() {
        assert_eq!(main_with_args(["q2d", "--help"]), EXIT_OK);
        assert_eq!(main_with_args(["q2d", "frobnicate"]), EXIT_USAGE);
        assert_eq!(main_with_args(["q2d", "generate", "--qa", "x"]), EXIT_USAGE);
    }
}
