//! Independent reference implementations used by the acceptance suite.
//!
//! Nothing here calls into the scoring code it checks. Each oracle is the
//! textbook formula written as plainly as possible, so a disagreement points
//! at the optimized implementation.

use std::cmp::Ordering;

use admitqa::agents::{PriorityGroup, Region};
use admitqa::ids::UnitId;
use admitqa::index::{UnitRecord, UnitSource};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Score descending, then id ascending.
pub fn by_score_then_id(a: &(UnitId, f64), b: &(UnitId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Okapi BM25 over every document, positive scores only, best first.
///
/// Written per document: count `tf` by scanning, compute `df` by scanning
/// the whole corpus. Quadratic and obvious.
pub fn naive_bm25(docs: &[(UnitId, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(UnitId, f64)> {
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avgdl = total as f64 / n;
    let mut out = Vec::new();
    for (id, tokens) in docs {
        let dl = tokens.len() as f64;
        let mut score = 0.0;
        for term in query {
            let tf = tokens.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|(_, t)| t.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if score > 0.0 {
            out.push((*id, score));
        }
    }
    out.sort_by(by_score_then_id);
    out
}

/// Inner product accumulated left to right in `f64`.
pub fn inner(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

/// Every vector scored against `q`, sorted by [`by_score_then_id`].
pub fn exhaustive_cosine(vectors: &[(UnitId, Vec<f32>)], q: &[f32]) -> Vec<(UnitId, f64)> {
    let mut all: Vec<(UnitId, f64)> = vectors.iter().map(|(id, v)| (*id, inner(v, q))).collect();
    all.sort_by(by_score_then_id);
    all
}

/// Uniform direction on the 768-sphere, via normalized Gaussians.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        // Box-Muller
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Default bonus table, restated.
pub fn region_points(r: Region) -> f64 {
    match r {
        Region::Kv1 => 0.75,
        Region::Kv2Nt => 0.5,
        Region::Kv2 => 0.25,
        Region::Kv3 => 0.0,
    }
}

pub fn group_points(g: PriorityGroup) -> f64 {
    match g {
        PriorityGroup::Pg1 => 2.0,
        PriorityGroup::Pg2 => 1.0,
        PriorityGroup::None => 0.0,
    }
}

/// Full bonus below 22.5, linearly shrinking to zero at 30, total capped at 30.
pub fn direct_score(base: f64, r: Region, g: PriorityGroup) -> f64 {
    let bonus = region_points(r) + group_points(g);
    let applied = if base < 22.5 { bonus } else { bonus * (30.0 - base) / 7.5 };
    (base + applied).min(30.0)
}

const SYLLABLES: &[&str] = &[
    "tuyển", "sinh", "ngành", "điểm", "chuẩn", "học", "phí", "xét", "bạ", "khối", "mã", "trường", "đại", "công",
    "nghệ", "kỹ", "thuật", "kinh", "tế", "quản", "trị", "logistics", "dữ", "liệu", "mạng", "phần", "mềm", "điện",
    "tử", "ô", "tô", "xây", "dựng", "cầu", "đường", "vận", "tải", "hồ", "sơ", "hạn", "nộp", "năm", "chỉ", "tiêu",
];

/// A deterministic vocabulary of two-syllable words plus numeric codes.
fn vocabulary(size: usize) -> Vec<String> {
    let mut v = Vec::with_capacity(size);
    'outer: for a in SYLLABLES {
        for b in SYLLABLES {
            if v.len() == size {
                break 'outer;
            }
            v.push(format!("{a}{b}"));
        }
    }
    let mut code = 7_000_000;
    while v.len() < size {
        v.push(code.to_string());
        code += 1;
    }
    v
}

/// Rank-biased pick: low ranks much more likely, roughly Zipfian.
fn zipf_pick<'a>(rng: &mut ChaCha8Rng, vocab: &'a [String]) -> &'a str {
    let u: f64 = rng.random();
    let i = ((vocab.len() as f64).powf(u) - 1.0) as usize;
    &vocab[i.min(vocab.len() - 1)]
}

/// `n` chunk units of `len` tokens each, with ids `DOC-0000` upward.
pub fn synthetic_units(n: usize, len: usize, seed: u64) -> Vec<UnitRecord> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(4000);
    (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..len).map(|_| zipf_pick(&mut rng, &vocab)).collect();
            UnitRecord {
                id: UnitId::doc(i as u16).expect("at most 10,000 synthetic chunks"),
                title: format!("Tài liệu {i}"),
                text: text.join(" "),
                source: UnitSource::Chunk { parent_doc: format!("syn-{}", i / 8), token_start: 0, token_len: len },
            }
        })
        .collect()
}

/// Short queries of mid-frequency words, drawn from the same vocabulary.
pub fn synthetic_queries(n: usize, seed: u64) -> Vec<String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(4000);
    (0..n)
        .map(|_| {
            let words = rng.random_range(2..=6);
            (0..words).map(|_| vocab[..2000].choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_score_matches_the_worked_example() {
        assert!((direct_score(23.0, Region::Kv1, PriorityGroup::Pg2) - 24.633_333).abs() < 1e-5);
        assert_eq!(direct_score(30.0, Region::Kv1, PriorityGroup::Pg1), 30.0);
    }

    #[test]
    fn naive_bm25_single_doc() {
        let d = vec![(UnitId::doc(1).unwrap(), vec!["a".to_string(), "b".to_string()])];
        let s = naive_bm25(&d, &["a".to_string()], 1.2, 0.75);
        // N = 1, df = 1: idf = ln(1 + 0.5/1.5); dl = avgdl so the length term is 1
        let expect = (1.0f64 + 1.0 / 3.0).ln() * 2.2 / 2.2;
        assert!((s[0].1 - expect).abs() < 1e-12);
    }

    #[test]
    fn percentile_nearest_rank() {
        let xs: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&xs, 95.0), 19.0);
        assert_eq!(percentile(&xs, 100.0), 20.0);
    }
}
