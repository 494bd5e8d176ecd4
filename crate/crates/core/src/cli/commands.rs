use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::manifest::ManifestBuilder;
use super::*;
use crate::corpus::{read_all, write_jsonl, Dialog, GeneratedSample, Keyed, QaRecord};
use crate::eval::{
    evaluate, mean_nli, question_response_pairs, score_response_factuality, EvalRecord, FactualityRecord,
    FixtureSearch, LiveSearch, SearchClient,
};
use crate::filter::{apply_filters, score_sample, sweep_thresholds, FilterReport};
use crate::llm::PromptSet;
use crate::pipeline::{Pipeline, PipelineConfig};

/// `<path><suffix>`, e.g. `out.jsonl` → `out.jsonl.manifest.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_path(explicit: Option<PathBuf>, anchor: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| sibling(anchor, ".manifest.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut body =
        serde_json::to_string_pretty(&serde_json::to_value(value).expect("serializable")).expect("serializable");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn snapshot<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config is serializable")
}

pub(super) fn generate(a: GenerateArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let prompt_set = PromptSet::load(&a.prompts)?;
    let mut cfg = PipelineConfig::new(prompt_set, a.lm.resolve(&file)?);
    cfg.scorers = a.scorer.resolve(&file)?;
    cfg.filters = a.filter.resolve(&file)?;
    if let Some(t) = a.temperature.or(file.temperature) {
        cfg.forward_temperature = t;
    }
    if let Some(c) = a.concurrency.or(file.concurrency) {
        cfg.concurrency = c;
    }
    cfg.checkpoint_path = a.checkpoint.clone().or(file.checkpoint.clone());
    if a.resume && cfg.checkpoint_path.is_none() {
        return Err(Error::Config("--resume needs --checkpoint".into()));
    }
    cfg.validate()?;

    let mut manifest = ManifestBuilder::start(
        "generate",
        json!({ "pipeline": snapshot(&cfg), "resume": a.resume, "seed": a.seed }),
    );
    manifest.input(&a.qa);
    manifest.input(&a.prompts);
    if let Some(p) = &cfg.lm.replay_path {
        manifest.input(p);
    }

    let qa: Vec<QaRecord> = read_all(&a.qa)?;
    if qa.is_empty() {
        return Err(Error::Input(format!("{} has no records", a.qa.display())));
    }
    let pipeline = Pipeline::new(cfg)?;
    let report = if a.resume {
        pipeline.resume(&qa, &a.out)?
    } else {
        pipeline.run_to_file(&qa, &a.out)?
    };
    let report_path = a.report.unwrap_or_else(|| sibling(&a.out, ".report.json"));
    write_json(&report_path, &report)?;
    print_filter_report(&report);
    manifest.finish(&[&a.out, &report_path], &manifest_path(a.manifest, &a.out))?;
    Ok(())
}

fn print_filter_report(r: &FilterReport) {
    println!("samples   {}", r.total);
    println!("retained  {}", r.retained);
    for (k, v) in &r.failed_by_filter {
        println!("failed {k:<12} {v}");
    }
}

pub(super) fn filter(a: FilterCmdArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let filters = a.filter.resolve(&file)?;
    let scorer_cfg = a.scorer.resolve(&file)?;
    let mut manifest = ManifestBuilder::start(
        "filter",
        json!({ "filters": snapshot(&filters), "scorers": snapshot(&scorer_cfg), "rescore": a.rescore }),
    );
    manifest.input(&a.input);

    let mut samples: Vec<GeneratedSample> = read_all(&a.input)?;
    let scorers = if a.rescore { Some(scorer_cfg.build()?) } else { None };
    for s in samples.iter_mut().filter(|s| !s.is_parse_error()) {
        if let Some(p) = &scorers {
            s.scores = score_sample(s, p, &filters)?;
        }
        s.verdict = apply_filters(&s.scores, &filters);
    }
    write_jsonl(&a.out, &samples)?;
    let report = FilterReport::from_samples(&filters, &samples);
    let report_path = a.report.unwrap_or_else(|| sibling(&a.out, ".report.json"));
    write_json(&report_path, &report)?;
    print_filter_report(&report);
    manifest.finish(&[&a.out, &report_path], &manifest_path(a.manifest, &a.out))?;
    Ok(())
}

/// Parses a comma-separated ascending threshold list.
pub(super) fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    let ts = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| Error::Config(format!("bad threshold {t:?} (expected a number in [0, 1])")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("thresholds must be ascending: {s}")));
    }
    Ok(ts)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationPoint {
    pub threshold: f64,
    pub filtered_fraction: f64,
    pub retained: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub n: usize,
    pub excluded_parse_errors: usize,
    pub points: Vec<AblationPoint>,
}

pub(super) fn ablate(a: AblateArgs) -> Result<()> {
    let thresholds = parse_thresholds(&a.thresholds)?;
    let out = a.out.unwrap_or_else(|| sibling(&a.input, ".ablation.json"));
    let mut manifest = ManifestBuilder::start("ablate", json!({ "thresholds": thresholds }));
    manifest.input(&a.input);

    let samples: Vec<GeneratedSample> = read_all(&a.input)?;
    let (ok, errs): (Vec<_>, Vec<_>) = samples.iter().partition(|s| !s.is_parse_error());
    let scored: Vec<_> = ok.iter().map(|s| s.scores).collect();
    let sweep = sweep_thresholds(&scored, &thresholds)?;
    let n = scored.len();
    let report = AblationReport {
        n,
        excluded_parse_errors: errs.len(),
        points: sweep
            .into_iter()
            .map(|(threshold, filtered_fraction)| AblationPoint {
                threshold,
                filtered_fraction,
                retained: n - (filtered_fraction * n as f64).round() as usize,
            })
            .collect(),
    };
    println!("{:>9} {:>10} {:>9}", "threshold", "filtered%", "retained");
    for p in &report.points {
        println!(
            "{:>9} {:>10.1} {:>9}",
            p.threshold,
            p.filtered_fraction * 100.0,
            p.retained
        );
    }
    write_json(&out, &report)?;
    manifest.finish(&[&out], &manifest_path(a.manifest, &out))?;
    Ok(())
}

pub(super) fn eval(a: EvalArgs) -> Result<()> {
    let scorer_cfg = a.scorer.resolve(&FileConfig::default())?;
    let mut manifest = ManifestBuilder::start(
        "eval",
        json!({
            "scorers": snapshot(&scorer_cfg),
            "search": if a.search_live { "live" } else if a.search_fixtures.is_some() { "fixtures" } else { "none" },
        }),
    );
    manifest.input(&a.pred);
    let search: Option<Box<dyn SearchClient>> = if let Some(p) = &a.search_fixtures {
        manifest.input(p);
        Some(Box::new(FixtureSearch::load(p)?))
    } else if a.search_live {
        let mut live = LiveSearch::from_env(a.search_endpoint.clone(), Duration::from_millis(a.search_interval_ms))?;
        if let Some(r) = &a.search_record {
            live = live.recording_to(r);
        }
        Some(Box::new(live))
    } else {
        None
    };

    let records: Vec<EvalRecord> = read_all(&a.pred)?;
    let scorers = scorer_cfg.build()?;
    let ev = evaluate(&records, scorers.embedder.as_ref(), search.as_deref())?;
    print!("{}", ev.report.render_table());
    let report = a.report.unwrap_or_else(|| sibling(&a.pred, ".report.json"));
    let breakdown = a.breakdown.unwrap_or_else(|| sibling(&a.pred, ".breakdown.jsonl"));
    write_json(&report, &ev.report)?;
    write_jsonl(&breakdown, &ev.rows)?;
    manifest.finish(&[&report, &breakdown], &manifest_path(a.manifest, &report))?;
    Ok(())
}

/// Anything with an id and a dialog; other fields are ignored.
#[derive(Debug, Deserialize)]
struct DialogRecord {
    id: String,
    dialog: Dialog,
}

impl Keyed for DialogRecord {
    fn key(&self) -> Option<&str> {
        Some(&self.id)
    }
}

#[derive(Debug, Deserialize)]
struct DocRecord {
    id: String,
    document: String,
}

impl Keyed for DocRecord {
    fn key(&self) -> Option<&str> {
        Some(&self.id)
    }
}

/// One scored (user turn, assistant turn) pair.
#[derive(Debug, Serialize, Deserialize)]
pub struct FactualityRow {
    pub id: String,
    pub set: String,
    pub turn: usize,
    #[serde(flatten)]
    pub record: FactualityRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FactualitySummary {
    pub set: String,
    pub n: usize,
    pub mean_nli: Option<f64>,
}

pub(super) fn factuality(a: FactualityArgs) -> Result<()> {
    let endpoint = a
        .nli_endpoint
        .clone()
        .or_else(|| std::env::var(SCORING_URL_ENV).ok().filter(|s| !s.is_empty()))
        .ok_or_else(|| Error::Config(format!("factuality needs --nli-endpoint or {SCORING_URL_ENV}")))?;
    let mut scorer_cfg = ScoreProviderConfig::remote(endpoint);
    scorer_cfg.cache_path = a.score_cache.clone();
    let mut manifest = ManifestBuilder::start("factuality", json!({ "scorers": snapshot(&scorer_cfg) }));
    manifest.input(&a.dialogs);
    manifest.input(&a.docs);

    let docs: HashMap<String, String> = read_all::<DocRecord>(&a.docs)?
        .into_iter()
        .map(|d| (d.id, d.document))
        .collect();
    let mut sets = vec![("primary".to_string(), read_all::<DialogRecord>(&a.dialogs)?)];
    if let Some(c) = &a.compare {
        manifest.input(c);
        sets.push(("compare".to_string(), read_all::<DialogRecord>(c)?));
    }
    let scorers = scorer_cfg.build()?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (set, dialogs) in &sets {
        let mut scored = Vec::new();
        for d in dialogs {
            let doc = docs
                .get(&d.id)
                .ok_or_else(|| Error::Input(format!("no document for dialog {:?}", d.id)))?;
            for (turn, (q, r)) in question_response_pairs(&d.dialog).into_iter().enumerate() {
                let record = score_response_factuality(q, r, doc, &scorers)?;
                scored.push(record.clone());
                rows.push(FactualityRow {
                    id: d.id.clone(),
                    set: set.clone(),
                    turn,
                    record,
                });
            }
        }
        summaries.push(FactualitySummary {
            set: set.clone(),
            n: scored.len(),
            mean_nli: mean_nli(&scored),
        });
    }

    println!("{:<10} {:>6} {:>9}", "set", "n", "mean NLI");
    for s in &summaries {
        match s.mean_nli {
            Some(m) => println!("{:<10} {:>6} {:>9.4}", s.set, s.n, m),
            None => println!("{:<10} {:>6} {:>9}", s.set, s.n, "-"),
        }
    }
    write_jsonl(&a.out, &rows)?;
    let report = a.report.unwrap_or_else(|| sibling(&a.out, ".report.json"));
    write_json(&report, &summaries)?;
    manifest.finish(&[&a.out, &report], &manifest_path(a.manifest, &a.out))?;
    Ok(())
}

pub(super) fn export(a: ExportArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::start("export", json!({ "retained_only": a.retained_only }));
    manifest.input(&a.input);
    let samples: Vec<GeneratedSample> = read_all(&a.input)?;
    let n = write_jsonl(
        &a.out,
        samples.iter().filter(|s| !a.retained_only || s.verdict.retained),
    )?;
    println!("exported {n} of {} samples", samples.len());
    manifest.finish(&[&a.out], &manifest_path(a.manifest, &a.out))?;
    Ok(())
}

pub(super) fn regenerate(a: RegenerateArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let mut cfg = PipelineConfig::new(PromptSet::load(&a.prompts)?, a.lm.resolve(&file)?);
    if let Some(c) = a.concurrency.or(file.concurrency) {
        cfg.concurrency = c;
    }
    cfg.validate()?;
    let mut manifest = ManifestBuilder::start(
        "regenerate",
        json!({ "prompt_set": snapshot(&cfg.prompt_set), "lm": snapshot(&cfg.lm), "concurrency": cfg.concurrency }),
    );
    manifest.input(&a.input);
    manifest.input(&a.prompts);
    if let Some(p) = &cfg.lm.replay_path {
        manifest.input(p);
    }
    let samples: Vec<GeneratedSample> = read_all(&a.input)?;
    let out = Pipeline::new(cfg)?.regenerate_answers(&samples)?;
    write_jsonl(&a.out, &out)?;
    println!("regenerated {} samples", out.len());
    manifest.finish(&[&a.out], &manifest_path(a.manifest, &a.out))?;
    Ok(())
}
