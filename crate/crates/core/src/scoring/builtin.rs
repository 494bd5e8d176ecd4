use super::{check_texts, Embedder, EmbeddingVector};
use crate::error::Result;
use crate::textmetrics::tokenize;

pub const BUILTIN_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64 of the token's UTF-8 bytes, reduced mod 256.
pub fn bucket_of(token: &str) -> usize {
    let h = token
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME));
    (h % BUILTIN_DIM as u64) as usize
}

/// Hashed bag-of-words embedder. Deterministic everywhere, no semantics.
///
/// Text that tokenizes to nothing (pure punctuation) is hashed as its trimmed
/// lowercase form so every non-blank input still gets a unit vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinEmbedder;

impl BuiltinEmbedder {
    pub fn embed_one(text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; BUILTIN_DIM];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            counts[bucket_of(&text.trim().to_lowercase())] = 1.0;
        } else {
            for t in tokens.tokens() {
                counts[bucket_of(t)] += 1.0;
            }
        }
        EmbeddingVector::normalized(counts).expect("at least one bucket is non-zero")
    }
}

impl Embedder for BuiltinEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{cosine, UNIT_NORM_TOLERANCE};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    // Independent oracle: the dense count vector, written straight from the
    // definition, and cosine over raw counts.
    fn oracle_counts(text: &str) -> BTreeMap<usize, f64> {
        let mut m = BTreeMap::new();
        for w in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let mut h: u64 = 14695981039346656037;
            for b in w.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(1099511628211);
            }
            *m.entry((h % 256) as usize).or_insert(0.0) += 1.0;
        }
        m
    }

    fn oracle_cosine(a: &str, b: &str) -> f64 {
        let (ca, cb) = (oracle_counts(a), oracle_counts(b));
        let dot: f64 = ca.iter().map(|(k, v)| v * cb.get(k).unwrap_or(&0.0)).sum();
        let na = ca.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb = cb.values().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn fnv_reference_values() {
        // FNV-1a 64 test vectors: "" → cbf29ce484222325, "a" → af63dc4c8601ec8c
        assert_eq!(bucket_of(""), 0x25);
        assert_eq!(bucket_of("a"), 0x8c);
    }

    #[test]
    fn determinism_and_self_similarity() {
        let v = BuiltinEmbedder.embed(&["a", "a"]).unwrap();
        assert_eq!(v[0], v[1]);
        let x = BuiltinEmbedder.embed(&["x"]).unwrap();
        assert_eq!(cosine(&x[0], &x[0]).unwrap(), 1.0);
    }

    #[test]
    fn partial_overlap_matches_oracle() {
        let (a, b) = ("who played ardra", "who played ardra on star trek");
        let got = BuiltinEmbedder.similarity(a, b).unwrap();
        let want = oracle_cosine(a, b);
        assert!(got > 0.0 && got < 1.0, "{got}");
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // No collisions among these six tokens: 3 / sqrt(3 * 6).
        assert!((want - 3.0 / 18f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let v = BuiltinEmbedder.embed(&["?!"]).unwrap();
        assert!((v[0].norm() - 1.0).abs() < UNIT_NORM_TOLERANCE);
    }

    proptest! {
        #[test]
        fn unit_norm(s in "[a-zA-Z ,.?]{1,80}") {
            prop_assume!(!s.trim().is_empty());
            let v = BuiltinEmbedder::embed_one(&s);
            prop_assert!((v.norm() - 1.0).abs() < UNIT_NORM_TOLERANCE);
            prop_assert_eq!(v.dimension(), BUILTIN_DIM);
        }

        #[test]
        fn bucket_disjoint_texts_are_orthogonal(
            a in prop::collection::vec("[a-z]{2,7}", 1..6),
            b in prop::collection::vec("[a-z]{2,7}", 1..6),
        ) {
            let ba: Vec<_> = a.iter().map(|t| bucket_of(t)).collect();
            prop_assume!(b.iter().all(|t| !ba.contains(&bucket_of(t))));
            let sim = BuiltinEmbedder.similarity(&a.join(" "), &b.join(" ")).unwrap();
            prop_assert_eq!(sim, 0.0);
        }

        #[test]
        fn agrees_with_oracle(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
            prop_assume!(!a.trim().is_empty() && !b.trim().is_empty());
            let got = BuiltinEmbedder.similarity(&a, &b).unwrap();
            let want = if a == b { 1.0 } else { oracle_cosine(&a, &b).clamp(-1.0, 1.0) };
            prop_assert!((got - want).abs() < 1e-12);
        }
    }
}
