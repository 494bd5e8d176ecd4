//! The filter cascade: intent consistency, answer leak, last-turn similarity
//! and the optional NLI intent check, plus the intent-threshold sweep.
//!
//! Every filter is scored for every sample, even after an earlier one fails,
//! so a single pass supports later re-verdicts and ablations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{FilterKind, FilterScores, FilterVerdict, GeneratedSample, Role};
use crate::error::{Error, Result};
use crate::scoring::{cosine, ScoringProviders};
use crate::textmetrics::contains_overlap;

pub const DEFAULT_T_QUERY: f64 = 0.999;
pub const DEFAULT_T_ANSWER: f64 = 0.6;
pub const DEFAULT_T_LAST_TURN: f64 = 0.8;
pub const DEFAULT_T_NLI: f64 = 0.82;

/// Threshold grid of the reversed-query similarity ablation.
pub const ABLATION_GRID: [f64; 9] = [0.0, 0.25, 0.5, 0.75, 0.8, 0.9, 0.95, 0.99, 0.999];

/// Which turns the answer-leak check reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakScope {
    #[default]
    AllTurns,
    AssistantTurns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub t_query: f64,
    pub t_answer: f64,
    pub t_last_turn: f64,
    pub nli_enabled: bool,
    pub t_nli: f64,
    pub leak_scope: LeakScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            t_query: DEFAULT_T_QUERY,
            t_answer: DEFAULT_T_ANSWER,
            t_last_turn: DEFAULT_T_LAST_TURN,
            nli_enabled: false,
            t_nli: DEFAULT_T_NLI,
            leak_scope: LeakScope::AllTurns,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("t_query", self.t_query),
            ("t_answer", self.t_answer),
            ("t_last_turn", self.t_last_turn),
            ("t_nli", self.t_nli),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name}={t} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn nli_intent_hypothesis(question: &str) -> String {
    format!("The dialog asks the question {question}")
}

/// Computes all filter scores for a sample whose dialog and reversed question
/// are populated.
pub fn score_sample(sample: &GeneratedSample, scorers: &ScoringProviders, cfg: &FilterConfig) -> Result<FilterScores> {
    sample.dialog.validate()?;
    if sample.reversed_question.trim().is_empty() {
        return Err(Error::Input(format!("sample {} has no reversed question", sample.id)));
    }
    let last_user = &sample
        .dialog
        .last_user_turn()
        .expect("validated dialog ends in a user turn")
        .text;
    let vecs = scorers
        .embedder
        .embed(&[&sample.source_question, &sample.reversed_question, last_user])?;
    let intent_similarity = cosine(&vecs[0], &vecs[1])?;
    let last_turn_similarity = cosine(&vecs[2], &vecs[0])?;

    let dialog_text = match cfg.leak_scope {
        LeakScope::AllTurns => sample.dialog.joined_text(None),
        LeakScope::AssistantTurns => sample.dialog.joined_text(Some(Role::Assistant)),
    };
    let answer_leak = contains_overlap(&dialog_text, &sample.answer);

    let nli_intent = if cfg.nli_enabled {
        Some(scorers.nli_score(
            &sample.dialog.render_turns(),
            &nli_intent_hypothesis(&sample.source_question),
        )?)
    } else {
        None
    };
    Ok(FilterScores {
        intent_similarity,
        answer_leak,
        last_turn_similarity,
        nli_intent,
    })
}

/// Keeps on `intent ≥ t_query`, `leak ≤ t_answer`, `last_turn ≤ t_last_turn`
/// and, when enabled, `nli ≥ t_nli`. A missing NLI score fails the NLI filter.
pub fn apply_filters(scores: &FilterScores, cfg: &FilterConfig) -> FilterVerdict {
    let mut failed = Vec::new();
    if scores.intent_similarity < cfg.t_query {
        failed.push(FilterKind::Intent);
    }
    if scores.answer_leak > cfg.t_answer {
        failed.push(FilterKind::AnswerLeak);
    }
    if scores.last_turn_similarity > cfg.t_last_turn {
        failed.push(FilterKind::LastTurn);
    }
    if cfg.nli_enabled && scores.nli_intent.is_none_or(|p| p < cfg.t_nli) {
        failed.push(FilterKind::Nli);
    }
    FilterVerdict::from_failures(failed)
}

/// Fraction of samples whose intent similarity falls below each threshold.
pub fn sweep_thresholds(scored: &[FilterScores], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scored.is_empty() {
        return Err(Error::Input("threshold sweep over an empty corpus".into()));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Input("thresholds must be sorted ascending".into()));
    }
    let n = scored.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let below = scored.iter().filter(|s| s.intent_similarity < t).count();
            (t, below as f64 / n)
        })
        .collect())
}

/// Indices retained by the intent filter alone at threshold `t`.
pub fn intent_retained(scored: &[FilterScores], t: f64) -> Vec<usize> {
    scored
        .iter()
        .enumerate()
        .filter(|(_, s)| s.intent_similarity >= t)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub config: FilterConfig,
    pub total: usize,
    pub retained: usize,
    pub failed_by_filter: BTreeMap<String, usize>,
}

impl FilterReport {
    pub fn from_samples<'a>(cfg: &FilterConfig, samples: impl IntoIterator<Item = &'a GeneratedSample>) -> Self {
        let mut failed_by_filter: BTreeMap<String, usize> =
            FilterKind::ALL.iter().map(|k| (k.as_str().to_string(), 0)).collect();
        let (mut total, mut retained) = (0, 0);
        for s in samples {
            total += 1;
            if s.verdict.retained {
                retained += 1;
            }
            for f in &s.verdict.failed_filters {
                *failed_by_filter.get_mut(f.as_str()).expect("all kinds present") += 1;
            }
        }
        FilterReport {
            config: cfg.clone(),
            total,
            retained,
            failed_by_filter,
        }
    }
}
