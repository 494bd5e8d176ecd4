//! Query-generation evaluation: embedding similarity, Rouge-1 recall
//! (gold query as reference) and Recall@10 over search results.

mod factuality;
mod search;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, Keyed};
use crate::error::{Error, Result};
use crate::scoring::{cosine, Embedder};
use crate::textmetrics::rouge1_recall;

pub use factuality::{
    factuality_hypothesis, mean_nli, question_response_pairs, score_response_factuality, FactualityRecord,
};
pub use search::{
    normalize_url, recall_at_10, FixtureSearch, LiveSearch, SearchClient, SearchResultPage, DEFAULT_SEARCH_ENDPOINT,
    PAGE_SIZE, SEARCH_KEY_ENV,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub id: String,
    pub dialog: Dialog,
    pub gold_query: String,
    pub predicted_query: String,
}

impl Keyed for EvalRecord {
    fn key(&self) -> Option<&str> {
        Some(&self.id)
    }

    fn validate(&self) -> Result<()> {
        if self.gold_query.trim().is_empty() {
            return Err(Error::Input("gold_query is empty".into()));
        }
        Ok(())
    }
}

/// Per-record metrics, written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub embedding_similarity: f64,
    pub rouge1_recall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub embedding_similarity_mean: f64,
    pub rouge1_recall_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_10_mean: Option<f64>,
    /// Records without a Recall@10 value because the gold page was empty.
    #[serde(default)]
    pub recall_at_10_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rows: Vec<EvalRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn from_rows(rows: &[EvalRow], with_search: bool) -> Self {
        let recall = with_search
            .then(|| mean(rows.iter().filter_map(|r| r.recall_at_10)))
            .flatten();
        EvalReport {
            n: rows.len(),
            embedding_similarity_mean: mean(rows.iter().map(|r| r.embedding_similarity)).unwrap_or(0.0),
            rouge1_recall_mean: mean(rows.iter().map(|r| r.rouge1_recall)).unwrap_or(0.0),
            recall_at_10_mean: recall,
            recall_at_10_skipped: if with_search {
                rows.iter().filter(|r| r.recall_at_10.is_none()).count()
            } else {
                0
            },
        }
    }

    /// Plain-text table: raw values and percentages.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>8} {:>7}", "metric", "raw", "%");
        let mut row = |name: &str, v: f64| {
            let _ = writeln!(out, "{name:<20} {v:>8.4} {:>7.1}", v * 100.0);
        };
        row("SBERT similarity", self.embedding_similarity_mean);
        row("Rouge-1 recall", self.rouge1_recall_mean);
        if let Some(r) = self.recall_at_10_mean {
            row("Recall@10", r);
        }
        let _ = write!(out, "n = {}", self.n);
        if self.recall_at_10_mean.is_some() || self.recall_at_10_skipped > 0 {
            let _ = write!(out, " (Recall@10 skipped: {})", self.recall_at_10_skipped);
        }
        out.push('\n');
        out
    }
}

fn page_for(search: &dyn SearchClient, query: &str, missing: &mut Vec<String>) -> Result<Option<SearchResultPage>> {
    if query.trim().is_empty() {
        return Ok(Some(SearchResultPage::new(query, Vec::<String>::new())));
    }
    match search.fetch(query) {
        Ok(p) => Ok(Some(p)),
        Err(Error::FixtureMiss { queries }) => {
            for q in queries {
                if !missing.contains(&q) {
                    missing.push(q);
                }
            }
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Scores every record. Fixture misses are collected and reported together.
pub fn evaluate(
    records: &[EvalRecord],
    embedder: &dyn Embedder,
    search: Option<&dyn SearchClient>,
) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for r in records {
        let embedding_similarity = if r.predicted_query.trim().is_empty() {
            0.0
        } else if r.predicted_query == r.gold_query {
            1.0
        } else {
            let v = embedder.embed(&[&r.gold_query, &r.predicted_query])?;
            cosine(&v[0], &v[1])?
        };
        let recall = match search {
            None => None,
            Some(s) => {
                let gold = page_for(s, &r.gold_query, &mut missing)?;
                let pred = page_for(s, &r.predicted_query, &mut missing)?;
                match (gold, pred) {
                    (Some(g), Some(p)) => recall_at_10(&g, &p),
                    _ => None,
                }
            }
        };
        rows.push(EvalRow {
            id: r.id.clone(),
            embedding_similarity,
            rouge1_recall: rouge1_recall(&r.gold_query, &r.predicted_query),
            recall_at_10: recall,
        });
    }
    if !missing.is_empty() {
        return Err(Error::FixtureMiss { queries: missing });
    }
    Ok(Evaluation {
        report: EvalReport::from_rows(&rows, search.is_some()),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DialogTurn;
    use crate::scoring::BuiltinEmbedder;

    fn rec(id: &str, gold: &str, pred: &str) -> EvalRecord {
        EvalRecord {
            id: id.into(),
            dialog: Dialog::new(vec![DialogTurn::user("who plays haley")]),
            gold_query: gold.into(),
            predicted_query: pred.into(),
        }
    }

    fn fixtures() -> FixtureSearch {
        FixtureSearch::from_pages([
            SearchResultPage::new(
                "who plays haley in wish upon a star",
                ["https://a.com/1", "https://a.com/2"],
            ),
            SearchResultPage::new("who plays haley", ["https://a.com/1", "https://b.com/"]),
            SearchResultPage::new("where is assam", ["https://c.com"]),
        ])
    }

    #[test]
    fn identity_is_all_ones() {
        let recs = [
            rec(
                "a",
                "who plays haley in wish upon a star",
                "who plays haley in wish upon a star",
            ),
            rec("b", "where is assam", "where is assam"),
        ];
        let f = fixtures();
        let ev = evaluate(&recs, &BuiltinEmbedder, Some(&f)).unwrap();
        assert_eq!(ev.report.embedding_similarity_mean, 1.0);
        assert_eq!(ev.report.rouge1_recall_mean, 1.0);
        assert_eq!(ev.report.recall_at_10_mean, Some(1.0));
        assert!(ev.rows.iter().all(|r| r.recall_at_10 == Some(1.0)));
    }

    #[test]
    fn partial_prediction() {
        let recs = [
            rec("a", "who plays haley in wish upon a star", "who plays haley"),
            rec("b", "where is assam", "where is assam"),
        ];
        let f = fixtures();
        let ev = evaluate(&recs, &BuiltinEmbedder, Some(&f)).unwrap();
        // rouge: 3/8 and 1 → mean 11/16
        assert!((ev.report.rouge1_recall_mean - (3.0 / 8.0 + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(ev.rows[0].recall_at_10, Some(0.5));
        assert_eq!(ev.report.recall_at_10_mean, Some(0.75));
    }

    #[test]
    fn without_search_recall_is_omitted() {
        let ev = evaluate(&[rec("a", "x y", "x")], &BuiltinEmbedder, None).unwrap();
        assert_eq!(ev.report.recall_at_10_mean, None);
        assert_eq!(ev.report.rouge1_recall_mean, 0.5);
        let json = serde_json::to_string(&ev.report).unwrap();
        assert!(!json.contains("recall_at_10_mean"));
        assert!(!ev.report.render_table().contains("Recall@10"));
    }

    #[test]
    fn misses_are_collected() {
        let f = fixtures();
        let err = evaluate(
            &[
                rec("a", "where is assam", "capital of assam"),
                rec("b", "unknown gold", "where is assam"),
            ],
            &BuiltinEmbedder,
            Some(&f),
        )
        .unwrap_err();
        match err {
            Error::FixtureMiss { queries } => assert_eq!(queries, ["capital of assam", "unknown gold"]),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let ev = evaluate(&[rec("a", "where is assam", "")], &BuiltinEmbedder, None).unwrap();
        assert_eq!(ev.rows[0].embedding_similarity, 0.0);
        assert_eq!(ev.rows[0].rouge1_recall, 0.0);
    }

    #[test]
    fn empty_input_errors() {
        assert!(evaluate(&[], &BuiltinEmbedder, None).is_err());
    }

    #[test]
    fn table_shape() {
        let r = EvalReport {
            n: 3,
            embedding_similarity_mean: 0.924,
            rouge1_recall_mean: 0.881,
            recall_at_10_mean: Some(0.685),
            recall_at_10_skipped: 0,
        };
        let t = r.render_table();
        assert!(t.contains("SBERT similarity       0.9240    92.4"), "{t}");
        assert!(t.contains("Rouge-1 recall         0.8810    88.1"), "{t}");
        assert!(t.contains("Recall@10              0.6850    68.5"), "{t}");
    }
}
