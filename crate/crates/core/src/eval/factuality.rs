use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, Role};
use crate::error::{Error, Result};
use crate::scoring::ScoringProviders;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityRecord {
    pub question: String,
    pub response: String,
    pub document: String,
    pub nli: f64,
}

pub fn factuality_hypothesis(question: &str, response: &str) -> String {
    format!("The answer to the question {question} is {response}")
}

/// Entailment of "the answer to `question` is `response`" by `document`.
pub fn score_response_factuality(
    question: &str,
    response: &str,
    document: &str,
    scorers: &ScoringProviders,
) -> Result<FactualityRecord> {
    if [question, response, document].iter().any(|s| s.trim().is_empty()) {
        return Err(Error::Input("question, response and document must be non-empty".into()));
    }
    let nli = scorers.nli_score(document, &factuality_hypothesis(question, response))?;
    Ok(FactualityRecord {
        question: question.into(),
        response: response.into(),
        document: document.into(),
        nli,
    })
}

/// `(user turn, following assistant turn)` pairs of a dialog.
pub fn question_response_pairs(dialog: &Dialog) -> Vec<(&str, &str)> {
    dialog
        .turns
        .windows(2)
        .filter(|w| w[0].role == Role::User && w[1].role == Role::Assistant)
        .map(|w| (w[0].text.as_str(), w[1].text.as_str()))
        .collect()
}

pub fn mean_nli(records: &[FactualityRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(records.iter().map(|r| r.nli).sum::<f64>() / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DialogTurn;

    #[test]
    fn hypothesis_template() {
        assert_eq!(
            factuality_hypothesis("who directed it", "Cecil B. DeMille"),
            "The answer to the question who directed it is Cecil B. DeMille"
        );
    }

    #[test]
    fn needs_nli_and_inputs() {
        let p = ScoringProviders::builtin();
        assert!(matches!(
            score_response_factuality("q", "r", "d", &p),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            score_response_factuality("q", " ", "d", &p),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn pairs() {
        let d = Dialog::new(vec![
            DialogTurn::user("a"),
            DialogTurn::assistant("b"),
            DialogTurn::assistant("c"),
            DialogTurn::user("d"),
        ]);
        assert_eq!(question_response_pairs(&d), [("a", "b")]);
        assert_eq!(mean_nli(&[]), None);
    }
}
