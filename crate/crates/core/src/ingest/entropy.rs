use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Accepted Shannon-entropy band in bits per character.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyBand {
    pub min_bits: f64,
    pub max_bits: f64,
}

impl Default for EntropyBand {
    fn default() -> Self {
        Self { min_bits: 1.5, max_bits: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyReject {
    Empty,
    TooLow(f64),
    TooHigh(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyVerdict {
    Accept(f64),
    Reject(EntropyReject),
}

impl EntropyVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, EntropyVerdict::Accept(_))
    }
}

/// Shannon entropy (bits) of the character distribution. Zero for empty input.
pub fn char_entropy(text: &str) -> f64 {
    let mut freq: HashMap<char, usize> = HashMap::new();
    let mut n = 0usize;
    for c in text.chars() {
        *freq.entry(c).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    // sorted so the floating-point sum does not depend on hash order
    let mut counts: Vec<usize> = freq.into_values().collect();
    counts.sort_unstable();
    -counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

pub fn entropy_gate(text: &str, band: EntropyBand) -> EntropyVerdict {
    if text.is_empty() {
        return EntropyVerdict::Reject(EntropyReject::Empty);
    }
    let h = char_entropy(text);
    if h < band.min_bits {
        EntropyVerdict::Reject(EntropyReject::TooLow(h))
    } else if h > band.max_bits {
        EntropyVerdict::Reject(EntropyReject::TooHigh(h))
    } else {
        EntropyVerdict::Accept(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_symbol_is_rejected() {
        assert_eq!(
            entropy_gate("aaaaaaaaaa", EntropyBand::default()),
            EntropyVerdict::Reject(EntropyReject::TooLow(0.0))
        );
    }

    #[test]
    fn english_question_is_accepted() {
        // frequency count done by hand / offline: 45 chars, H = 3.696014...
        let v = entropy_gate("what is the tuition fee for civil engineering", EntropyBand::default());
        match v {
            EntropyVerdict::Accept(h) => assert!((h - 3.696_014_342_704_489).abs() < 1e-12, "{h}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(entropy_gate("", EntropyBand::default()), EntropyVerdict::Reject(EntropyReject::Empty));
    }

    #[test]
    fn uniform_alphabet_entropy() {
        // 128 distinct code points, each once: log2(128) = 7 bits, above the band
        let s: String = (0x4e00u32..0x4e80).filter_map(char::from_u32).collect();
        assert!((char_entropy(&s) - 7.0).abs() < 1e-12);
        assert!(matches!(entropy_gate(&s, EntropyBand::default()), EntropyVerdict::Reject(EntropyReject::TooHigh(_))));
    }
}
