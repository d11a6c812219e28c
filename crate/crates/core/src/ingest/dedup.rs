use std::collections::HashSet;

use super::normalize::normalize_text;
use super::tokenize::Tokenizer;

pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// An item dropped as a near-duplicate of an earlier retained item.
#[derive(Debug, Clone)]
pub struct Removed<T> {
    pub item: T,
    /// Index into `retained` of the item it duplicates.
    pub duplicate_of: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome<T> {
    pub retained: Vec<T>,
    pub removed: Vec<Removed<T>>,
}

/// Greedy first-wins near-duplicate filter in input order. An item is dropped
/// when its token-set Jaccard similarity with any retained item is
/// `>= threshold`.
pub fn dedup_by<T>(
    items: Vec<T>,
    threshold: f64,
    tokenizer: &dyn Tokenizer,
    text_of: impl Fn(&T) -> &str,
) -> DedupOutcome<T> {
    let mut retained: Vec<T> = Vec::new();
    let mut sets: Vec<HashSet<String>> = Vec::new();
    let mut removed = Vec::new();
    for item in items {
        let set: HashSet<String> = tokenizer
            .tokenize(&normalize_text(text_of(&item)))
            .into_iter()
            .collect();
        let hit = sets
            .iter()
            .enumerate()
            .map(|(i, s)| (i, jaccard(&set, s)))
            .find(|&(_, j)| j >= threshold);
        match hit {
            Some((duplicate_of, similarity)) => removed.push(Removed { item, duplicate_of, similarity }),
            None => {
                retained.push(item);
                sets.push(set);
            }
        }
    }
    DedupOutcome { retained, removed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SimpleTokenizer;
    use proptest::prelude::*;

    fn run(texts: &[&str]) -> DedupOutcome<String> {
        dedup_by(texts.iter().map(|s| s.to_string()).collect(), 0.9, &SimpleTokenizer, |s| s.as_str())
    }

    #[test]
    fn identical_second_removed() {
        let out = run(&["tuition is 15 million", "Tuition  is 15 million"]);
        assert_eq!(out.retained.len(), 1);
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].duplicate_of, 0);
        assert_eq!(out.removed[0].similarity, 1.0);
    }

    #[test]
    fn half_overlap_kept() {
        let a: HashSet<_> = ["a", "b", "c"].into_iter().collect();
        let b: HashSet<_> = ["a", "b", "d"].into_iter().collect();
        assert_eq!(jaccard(&a, &b), 0.5);
        assert_eq!(run(&["a b c", "a b d"]).retained.len(), 2);
    }

    #[test]
    fn single_document() {
        assert_eq!(run(&["only one"]).retained.len(), 1);
    }

    proptest! {
        #[test]
        fn retained_set_is_stable(docs in proptest::collection::vec("[a-d]( [a-d]){0,5}", 0..12)) {
            let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
            let first = run(&refs);
            let again = dedup_by(first.retained.clone(), 0.9, &SimpleTokenizer, |s| s.as_str());
            prop_assert!(again.removed.is_empty());
            prop_assert_eq!(first.retained.len() + first.removed.len(), docs.len());
        }
    }
}
