//! Question → dialog → reversed question → scores → verdict.
//!
//! Records are processed by a bounded worker pool and emitted strictly in
//! input order. File runs flush after every batch and rewrite a checkpoint
//! listing the ids already on disk, so an aborted run can be resumed and ends
//! byte-identical to an uninterrupted one.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_hash;
use crate::corpus::{read_all, write_line, Dialog, FilterScores, FilterVerdict, GeneratedSample, QaRecord, Role};
use crate::error::{Error, Result};
use crate::filter::{apply_filters, score_sample, FilterConfig, FilterReport};
use crate::llm::{
    generate_response, parse_dialog, parse_question, LmBackend, LmBackendConfig, LmRequest, PromptSet,
    FORWARD_TEMPERATURE,
};
use crate::scoring::{ScoreProviderConfig, ScoringProviders};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub prompt_set: PromptSet,
    pub lm: LmBackendConfig,
    pub scorers: ScoreProviderConfig,
    pub filters: FilterConfig,
    pub forward_temperature: f64,
    pub concurrency: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(prompt_set: PromptSet, lm: LmBackendConfig) -> Self {
        PipelineConfig {
            prompt_set,
            lm,
            scorers: ScoreProviderConfig::default(),
            filters: FilterConfig::default(),
            forward_temperature: FORWARD_TEMPERATURE,
            concurrency: 1,
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be ≥ 1".into()));
        }
        if self.forward_temperature.is_nan() || self.forward_temperature < 0.0 {
            return Err(Error::Config("forward temperature must be ≥ 0".into()));
        }
        self.prompt_set.validate()?;
        self.filters.validate()?;
        self.scorers.validate()?;
        self.lm.validate()
    }

    /// Hash of everything that changes what a sample looks like.
    pub fn fingerprint(&self) -> String {
        canonical_hash(&serde_json::json!({
            "prompt_set": self.prompt_set.canonical_bytes(),
            "filters": self.filters,
            "backend": self.lm.kind.as_str(),
            "forward_temperature": self.forward_temperature,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub done_ids: Vec<String>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    fn store(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let body = crate::canonical::to_canonical_string(self).expect("checkpoint is JSON-serializable");
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub samples: Vec<GeneratedSample>,
    pub report: FilterReport,
}

impl RunOutput {
    pub fn retained(&self) -> impl Iterator<Item = &GeneratedSample> {
        self.samples.iter().filter(|s| s.verdict.retained)
    }
}

/// Applies `f` to every item on up to `workers` threads; results come back
/// in input order.
pub fn ordered_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<Result<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

fn check_unique_ids(qa: &[QaRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in qa {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Input(format!("duplicate QA id {:?}", r.id)));
        }
    }
    Ok(())
}

pub struct Pipeline {
    cfg: PipelineConfig,
    lm: Arc<dyn LmBackend>,
    scorers: ScoringProviders,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let lm = cfg.lm.build()?;
        let scorers = cfg.scorers.build()?;
        Ok(Pipeline { cfg, lm, scorers })
    }

    /// Uses caller-supplied providers instead of building them from config.
    pub fn with_components(cfg: PipelineConfig, lm: Arc<dyn LmBackend>, scorers: ScoringProviders) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline { cfg, lm, scorers })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn batch_size(&self) -> usize {
        self.cfg.concurrency * 4
    }

    /// Runs one record end to end. Unparseable completions yield a
    /// `parse_error` sample; backend and scorer failures are returned.
    pub fn process(&self, rec: &QaRecord) -> Result<GeneratedSample> {
        let ps = &self.cfg.prompt_set;
        let mut sample = GeneratedSample {
            id: rec.id.clone(),
            source_question: rec.question.clone(),
            answer: rec.answer.clone(),
            dialog: Dialog::default(),
            reversed_question: String::new(),
            scores: FilterScores::default(),
            verdict: FilterVerdict::parse_error(),
        };

        let fwd = LmRequest::forward(ps.render_forward(&rec.question), self.cfg.forward_temperature);
        let dialog = match parse_dialog(&self.lm.complete(&fwd)?) {
            Ok(d) => d,
            Err(Error::DialogParse { .. }) => return Ok(sample),
            Err(e) => return Err(e),
        };
        sample.dialog = dialog;

        let rev = LmRequest::reverse(ps.render_reverse(&sample.dialog));
        sample.reversed_question = match parse_question(&self.lm.complete(&rev)?) {
            Ok(q) => q,
            Err(Error::DialogParse { .. }) => return Ok(sample),
            Err(e) => return Err(e),
        };

        sample.scores = score_sample(&sample, &self.scorers, &self.cfg.filters)?;
        sample.verdict = apply_filters(&sample.scores, &self.cfg.filters);
        Ok(sample)
    }

    /// In-memory run over all records.
    pub fn run(&self, qa: &[QaRecord]) -> Result<RunOutput> {
        check_unique_ids(qa)?;
        let samples = ordered_map(qa, self.cfg.concurrency, |r| self.process(r))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let report = FilterReport::from_samples(&self.cfg.filters, &samples);
        Ok(RunOutput { samples, report })
    }

    /// Fresh run writing samples to `out`, checkpointing when configured.
    pub fn run_to_file(&self, qa: &[QaRecord], out: &Path) -> Result<FilterReport> {
        check_unique_ids(qa)?;
        std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
        let mut ckpt = Checkpoint {
            fingerprint: self.cfg.fingerprint(),
            done_ids: Vec::new(),
        };
        if let Some(p) = &self.cfg.checkpoint_path {
            ckpt.store(p)?;
        }
        self.continue_run(qa, out, &mut ckpt)
    }

    /// Continues from the configured checkpoint. A completed run is left
    /// untouched.
    pub fn resume(&self, qa: &[QaRecord], out: &Path) -> Result<FilterReport> {
        check_unique_ids(qa)?;
        let ckpt_path = self
            .cfg
            .checkpoint_path
            .as_ref()
            .ok_or_else(|| Error::Config("resume needs a checkpoint path".into()))?;
        let mut ckpt = Checkpoint::load(ckpt_path)?;
        let expected = self.cfg.fingerprint();
        if ckpt.fingerprint != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written with a different prompt set, filter configuration or backend \
                 (fingerprint {} ≠ {}); start a fresh run instead",
                ckpt.fingerprint, expected
            )));
        }
        let on_disk: Vec<GeneratedSample> = if out.exists() { read_all(out)? } else { Vec::new() };
        if on_disk.len() < ckpt.done_ids.len() || on_disk.iter().zip(&ckpt.done_ids).any(|(s, id)| &s.id != id) {
            return Err(Error::Checkpoint(format!(
                "{} does not start with the {} checkpointed samples",
                out.display(),
                ckpt.done_ids.len()
            )));
        }
        if on_disk.len() > ckpt.done_ids.len() {
            // Lines written after the last checkpoint are discarded and redone.
            crate::corpus::write_jsonl(out, &on_disk[..ckpt.done_ids.len()])?;
        }
        self.continue_run(qa, out, &mut ckpt)
    }

    fn continue_run(&self, qa: &[QaRecord], out: &Path, ckpt: &mut Checkpoint) -> Result<FilterReport> {
        let done: HashSet<&str> = ckpt.done_ids.iter().map(String::as_str).collect();
        let todo: Vec<&QaRecord> = qa.iter().filter(|r| !done.contains(r.id.as_str())).collect();
        drop(done);

        for batch in todo.chunks(self.batch_size()) {
            let results = ordered_map(batch, self.cfg.concurrency, |r| self.process(r));
            let file = OpenOptions::new()
                .append(true)
                .open(out)
                .map_err(|e| Error::io(out, e))?;
            let mut w = BufWriter::new(file);
            let mut failure = None;
            for r in results {
                match r {
                    Ok(s) => {
                        write_line(&mut w, &s).map_err(|e| Error::io(out, e))?;
                        ckpt.done_ids.push(s.id);
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(out, e))?;
            drop(w);
            if let Some(p) = &self.cfg.checkpoint_path {
                ckpt.store(p)?;
            }
            if let Some(e) = failure {
                return Err(e);
            }
        }
        let samples: Vec<GeneratedSample> = read_all(out)?;
        Ok(FilterReport::from_samples(&self.cfg.filters, &samples))
    }

    /// Replaces every assistant turn with a generated response conditioned on
    /// the (already regenerated) dialog up to the preceding user turn. User
    /// turns are kept verbatim; assistant turns with no earlier user turn are
    /// left as they are.
    pub fn regenerate_answers(&self, samples: &[GeneratedSample]) -> Result<Vec<GeneratedSample>> {
        ordered_map(samples, self.cfg.concurrency, |s| self.regenerate_one(s))
            .into_iter()
            .collect()
    }

    fn regenerate_one(&self, sample: &GeneratedSample) -> Result<GeneratedSample> {
        let mut out = sample.clone();
        if sample.dialog.is_empty() {
            return Ok(out);
        }
        sample.dialog.validate()?;
        for i in 0..out.dialog.turns.len() {
            if out.dialog.turns[i].role != Role::Assistant {
                continue;
            }
            let Some(last_user) = out.dialog.turns[..i].iter().rposition(|t| t.role == Role::User) else {
                continue;
            };
            let context = Dialog::new(out.dialog.turns[..=last_user].to_vec());
            out.dialog.turns[i].text = generate_response(self.lm.as_ref(), &self.cfg.prompt_set, &context)?;
        }
        Ok(out)
    }
}

pub fn run_q2d(qa: &[QaRecord], cfg: PipelineConfig) -> Result<RunOutput> {
    Pipeline::new(cfg)?.run(qa)
}

/// Resumes the run recorded at `checkpoint_path`, appending to `out`.
pub fn resume(checkpoint_path: &Path, mut cfg: PipelineConfig, qa: &[QaRecord], out: &Path) -> Result<FilterReport> {
    cfg.checkpoint_path = Some(checkpoint_path.to_path_buf());
    Pipeline::new(cfg)?.resume(qa, out)
}

pub fn regenerate_answers(samples: &[GeneratedSample], cfg: PipelineConfig) -> Result<Vec<GeneratedSample>> {
    Pipeline::new(cfg)?.regenerate_answers(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DialogTurn, FilterKind};
    use crate::llm::{test_prompt_set, BackendKind};

    fn echo_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::new(test_prompt_set(), LmBackendConfig::echo());
        // The echo dialog's last user turn is the question itself.
        cfg.filters.t_last_turn = 1.0;
        cfg
    }

    fn qa(n: usize) -> Vec<QaRecord> {
        (0..n)
            .map(|i| QaRecord::new(format!("q{i}"), format!("who won the cup in {}", 1990 + i), "someone"))
            .collect()
    }

    type Script = Box<dyn Fn(&LmRequest) -> Result<String> + Send + Sync>;
    struct Scripted(Script);

    impl LmBackend for Scripted {
        fn kind(&self) -> BackendKind {
            BackendKind::Http
        }
        fn complete(&self, req: &LmRequest) -> Result<String> {
            (self.0)(req)
        }
    }

    #[test]
    fn echo_run_is_fixpoint() {
        let out = run_q2d(&qa(10), echo_cfg()).unwrap();
        assert_eq!(out.samples.len(), 10);
        for (s, r) in out.samples.iter().zip(qa(10)) {
            assert_eq!(s.id, r.id);
            assert_eq!(s.reversed_question, s.source_question);
            assert!(s.verdict.retained, "{s:?}");
        }
        assert_eq!(out.report.retained, 10);
    }

    #[test]
    fn echo_under_default_last_turn_threshold_is_filtered() {
        let cfg = PipelineConfig::new(test_prompt_set(), LmBackendConfig::echo());
        let out = run_q2d(&qa(2), cfg).unwrap();
        assert!(out
            .samples
            .iter()
            .all(|s| s.verdict.failed_filters == [FilterKind::LastTurn]));
    }

    #[test]
    fn unparseable_dialog_becomes_parse_error_sample() {
        let lm = Scripted(Box::new(|_| Ok("Assistant: I cannot help with that.".into())));
        let p = Pipeline::with_components(echo_cfg(), Arc::new(lm), ScoringProviders::builtin()).unwrap();
        let out = p.run(&qa(3)).unwrap();
        assert_eq!(out.samples.len(), 3);
        assert!(out.samples.iter().all(|s| s.is_parse_error() && s.dialog.is_empty()));
        assert_eq!(out.report.failed_by_filter["parse_error"], 3);
    }

    #[test]
    fn backend_errors_abort() {
        let lm = Scripted(Box::new(|_| {
            Err(Error::Transport {
                endpoint: "lm".into(),
                message: "down".into(),
            })
        }));
        let p = Pipeline::with_components(echo_cfg(), Arc::new(lm), ScoringProviders::builtin()).unwrap();
        assert!(matches!(p.run(&qa(2)), Err(Error::Transport { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut xs = qa(2);
        xs[1].id = xs[0].id.clone();
        assert!(matches!(run_q2d(&xs, echo_cfg()), Err(Error::Input(_))));
    }

    #[test]
    fn order_is_independent_of_concurrency() {
        let one = run_q2d(&qa(23), echo_cfg()).unwrap();
        let mut cfg = echo_cfg();
        cfg.concurrency = 7;
        let many = run_q2d(&qa(23), cfg).unwrap();
        assert_eq!(one.samples, many.samples);
    }

    #[test]
    fn fingerprint_tracks_filters_not_concurrency() {
        let a = echo_cfg();
        let mut b = a.clone();
        b.concurrency = 9;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.filters.t_query = 0.5;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn regenerate_replaces_assistant_turns_only() {
        let p = Pipeline::new(echo_cfg()).unwrap();
        let s = GeneratedSample {
            id: "a".into(),
            source_question: "who fought the confederates".into(),
            answer: "The Union".into(),
            dialog: Dialog::new(vec![
                DialogTurn::assistant("Hi!"),
                DialogTurn::user("who were the confederates"),
                DialogTurn::assistant("The Confederate States of America."),
                DialogTurn::user("who fought them"),
            ]),
            reversed_question: "who fought the confederates".into(),
            scores: FilterScores::default(),
            verdict: FilterVerdict::default(),
        };
        let out = p.regenerate_answers(std::slice::from_ref(&s)).unwrap();
        let turns = &out[0].dialog.turns;
        assert_eq!(turns[0].text, "Hi!");
        assert_eq!(turns[1], s.dialog.turns[1]);
        assert_eq!(
            turns[2].text,
            "Here is what I found about \"who were the confederates\"."
        );
        assert_eq!(turns[3], s.dialog.turns[3]);

        let bare = GeneratedSample {
            dialog: Dialog::new(vec![DialogTurn::user("only a question")]),
            ..s
        };
        assert_eq!(p.regenerate_answers(std::slice::from_ref(&bare)).unwrap()[0], bare);
    }

    #[test]
    fn ordered_map_preserves_order() {
        let xs: Vec<usize> = (0..100).collect();
        let ys = ordered_map(&xs, 8, |x| {
            std::thread::sleep(std::time::Duration::from_micros((100 - *x as u64) * 10));
            Ok(x * 2)
        });
        let ys: Vec<usize> = ys.into_iter().map(Result::unwrap).collect();
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn resume_refuses_changed_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.samples.jsonl");
        let ck = dir.path().join("ck.json");
        let mut cfg = echo_cfg();
        cfg.checkpoint_path = Some(ck.clone());
        Pipeline::new(cfg.clone()).unwrap().run_to_file(&qa(4), &out).unwrap();
        cfg.filters.t_query = 0.5;
        let err = resume(&ck, cfg, &qa(4), &out).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn resume_of_finished_run_is_noop() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.samples.jsonl");
        let ck = dir.path().join("ck.json");
        let mut cfg = echo_cfg();
        cfg.checkpoint_path = Some(ck.clone());
        let first = Pipeline::new(cfg.clone()).unwrap().run_to_file(&qa(6), &out).unwrap();
        let before = std::fs::read(&out).unwrap();
        let again = resume(&ck, cfg, &qa(6), &out).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), before);
        assert_eq!(first, again);
        assert_eq!(Checkpoint::load(&ck).unwrap().done_ids.len(), 6);
    }
}
