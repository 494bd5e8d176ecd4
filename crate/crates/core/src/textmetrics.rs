//! Lexical metrics shared by the answer-leak filter and the evaluation harness.
//!
//! Tokenization lowercases and splits on maximal runs of non-alphanumeric
//! characters (Unicode-aware). Rouge-1 recall uses clipped multiset counts:
//! no stemming, no stopword removal.

use std::collections::HashMap;

/// Lowercased tokens; never contains an empty string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn counts(&self) -> HashMap<&str, usize> {
        let mut counts = HashMap::new();
        for t in &self.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

impl IntoIterator for TokenSeq {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.into_iter()
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    TokenSeq { tokens }
}

/// Clipped unigram overlap over the reference token count.
///
/// `Σ_w min(ref(w), cand(w)) / |ref|`, or 0 when the reference has no tokens.
pub fn rouge1_recall(reference: &str, candidate: &str) -> f64 {
    let reference = tokenize(reference);
    if reference.is_empty() {
        return 0.0;
    }
    let candidate = tokenize(candidate);
    let cand_counts = candidate.counts();
    let overlap: usize = reference
        .counts()
        .into_iter()
        .map(|(w, n)| n.min(cand_counts.get(w).copied().unwrap_or(0)))
        .sum();
    overlap as f64 / reference.len() as f64
}

/// Fraction of `needle` tokens found in `haystack`.
pub fn contains_overlap(haystack: &str, needle: &str) -> f64 {
    rouge1_recall(needle, haystack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).into_iter().collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("Who played Ardra?"), ["who", "played", "ardra"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("Marta DuBois"), ["marta", "dubois"]);
        assert_eq!(toks("  --Dolores_Claiborne's--  "), ["dolores", "claiborne", "s"]);
        assert_eq!(toks("Ça VA, Zürich"), ["ça", "va", "zürich"]);
    }

    #[test]
    fn rouge_examples() {
        let r = rouge1_recall("who played ardra on star trek the next generation", "who played ardra");
        assert!((r - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge1_recall("who won the cup", "Who won the cup?"), 1.0);
        assert_eq!(rouge1_recall("who won", ""), 0.0);
        assert_eq!(rouge1_recall("", "anything"), 0.0);
    }

    #[test]
    fn rouge_clips_repeated_tokens() {
        // ref has "the" twice; candidate once → 1 of the 2 "the"s is matched.
        assert_eq!(rouge1_recall("the the cat", "the cat"), 2.0 / 3.0);
        // candidate repeats do not inflate the score
        assert_eq!(rouge1_recall("the cat", "the the the"), 0.5);
    }

    #[test]
    fn overlap_examples() {
        let dialog = "User: who cast Ardra\nAssistant: Ardra was played by Marta DuBois.";
        assert_eq!(contains_overlap(dialog, "Marta DuBois"), 1.0);
        let dialog = "User: I'm wondering what league includes the operating group of the stadium.";
        assert_eq!(contains_overlap(dialog, "Qatar Stars League"), 1.0 / 3.0);
        assert_eq!(contains_overlap("User: he is a fan of Al Janoub", "Qatar Stars"), 0.0);
        assert_eq!(contains_overlap("the rest of the story", "the union"), 0.5);
        assert_eq!(contains_overlap("whatever", ""), 0.0);
    }

    proptest! {
        #[test]
        fn rouge_in_unit_interval(a in ".{0,60}", b in ".{0,60}") {
            let r = rouge1_recall(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
        }

        #[test]
        fn rouge_ignores_case_and_punctuation(
            words in prop::collection::vec("[a-z]{1,6}", 1..8),
            cand in prop::collection::vec("[a-z]{1,6}", 0..8),
        ) {
            let plain = words.join(" ");
            let shouty = words.iter().map(|w| w.to_uppercase()).collect::<Vec<_>>().join("?! ");
            let cand_plain = cand.join(" ");
            let cand_punct = format!("...{}!", cand.join(", "));
            prop_assert_eq!(rouge1_recall(&plain, &cand_plain), rouge1_recall(&shouty, &cand_punct));
        }

        #[test]
        fn self_recall_is_one(words in prop::collection::vec("[a-zA-Z0-9]{1,6}", 1..12)) {
            let s = words.join(" ");
            prop_assert_eq!(rouge1_recall(&s, &s), 1.0);
        }
    }
}
