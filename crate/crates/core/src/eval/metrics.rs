//! Ranking metrics (MRR, Recall@K, NDCG@K with binary gains) and answer
//! overlap metrics (BLEU, ROUGE-L, METEOR in exact-match form).
//!
//! Answer metrics tokenize by lowercasing and splitting on non-alphanumeric
//! characters, the same tokenization as the hashing embedder.

use std::collections::{BTreeSet, HashMap};

use crate::embedding::tokenize;
use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;
pub const BLEU_MAX_ORDER: usize = 4;

/// `1 / rank` of the first gold id in `ranking`, 0 if none appears.
pub fn reciprocal_rank(ranking: &[String], gold: &BTreeSet<String>) -> f64 {
    ranking
        .iter()
        .position(|id| gold.contains(id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// 1 if any gold id is among the first `k`, else 0.
pub fn hit_at_k(ranking: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    if ranking.iter().take(k).any(|id| gold.contains(id)) {
        1.0
    } else {
        0.0
    }
}

/// Binary-gain NDCG truncated at `k`. Repeated ids gain only once.
pub fn ndcg_single(ranking: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    let ideal: f64 = (0..gold.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let mut seen = BTreeSet::new();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| gold.contains(*id) && seen.insert(id.as_str()))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    (dcg / ideal).clamp(0.0, 1.0)
}

fn mean_over(
    rankings: &[Vec<String>],
    gold: &[BTreeSet<String>],
    f: impl Fn(&[String], &BTreeSet<String>) -> f64,
) -> Result<f64> {
    if rankings.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} rankings but {} gold sets",
            rankings.len(),
            gold.len()
        )));
    }
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = rankings.iter().zip(gold).map(|(r, g)| f(r, g)).sum();
    Ok(total / rankings.len() as f64)
}

pub fn mrr(rankings: &[Vec<String>], gold: &[BTreeSet<String>]) -> Result<f64> {
    mean_over(rankings, gold, reciprocal_rank)
}

pub fn recall_at_k(rankings: &[Vec<String>], gold: &[BTreeSet<String>], k: usize) -> Result<f64> {
    mean_over(rankings, gold, |r, g| hit_at_k(r, g, k))
}

pub fn ndcg_at_k(rankings: &[Vec<String>], gold: &[BTreeSet<String>], k: usize) -> Result<f64> {
    mean_over(rankings, gold, |r, g| ndcg_single(r, g, k))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU up to 4-grams with uniform weights and brevity penalty.
/// An order of 2 or more with no matching n-gram uses add-one smoothing,
/// `1 / (total + 1)`; unigram precision is never smoothed, so texts with no
/// shared token score 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let cand = ngram_counts(&c, n);
        let refs = ngram_counts(&r, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln() / BLEU_MAX_ORDER as f64;
    }
    let brevity = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    (brevity * log_sum.exp()).clamp(0.0, 1.0)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure weighted towards recall by [`ROUGE_BETA`].
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    ((1.0 + b2) * p * rec / (rec + b2 * p)).clamp(0.0, 1.0)
}

/// METEOR restricted to exact unigram matches: each candidate token aligns to
/// the earliest unused identical reference token; score is
/// `Fmean * (1 - 0.5 * (chunks / matches)^3)` with `Fmean = 10PR / (R + 9P)`.
pub fn meteor_simple(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut positions: HashMap<&str, std::collections::VecDeque<usize>> = HashMap::new();
    for (j, t) in r.iter().enumerate() {
        positions.entry(t.as_str()).or_default().push_back(j);
    }
    let mut aligned: Vec<usize> = Vec::new();
    for t in &c {
        if let Some(j) = positions.get_mut(t.as_str()).and_then(|q| q.pop_front()) {
            aligned.push(j);
        }
    }
    let m = aligned.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + aligned.windows(2).filter(|w| w[1] != w[0] + 1).count();
    let p = m as f64 / c.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn gold(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mrr_examples() {
        let g = vec![gold(&["x"]), gold(&["x"]), gold(&["x"])];
        let r = vec![ids(&["x"]), ids(&["a", "x"]), ids(&["a", "b", "c", "x"])];
        assert!((mrr(&r, &g).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&[ids(&["a"])], &[gold(&["x"])]).unwrap(), 0.0);
        assert_eq!(mrr(&[ids(&["x"]), ids(&["x"])], &[gold(&["x"]), gold(&["x"])]).unwrap(), 1.0);
        assert!(mrr(&[ids(&["x"])], &[]).is_err());
    }

    #[test]
    fn recall_examples() {
        let r = vec![ids(&["x"]), ids(&["a", "x"]), ids(&["x"]), ids(&[]), ids(&["b"])];
        let g = vec![gold(&["x"]); 5];
        assert!((recall_at_k(&r, &g, 1).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(hit_at_k(&ids(&["a", "x"]), &gold(&["x"]), 10), 1.0);
        assert_eq!(hit_at_k(&[], &gold(&["x"]), 3), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_single(&ids(&["x"]), &gold(&["x"]), 1), 1.0);
        let v = ndcg_single(&ids(&["a", "x", "b"]), &gold(&["x"]), 3);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_single(&ids(&["a", "b"]), &gold(&["x"]), 2), 0.0);
        // a repeated gold id is not counted twice
        assert_eq!(ndcg_single(&ids(&["x", "x"]), &gold(&["x", "y"]), 2), 1.0 / (1.0 + 1.0 / 3f64.log2()));
    }

    #[test]
    fn overlap_boundaries() {
        for f in [bleu, rouge_l] {
            assert_eq!(f("the cat sat on the mat", "the cat sat on the mat"), 1.0);
        }
        for f in [bleu, rouge_l, meteor_simple] {
            assert_eq!(f("alpha beta", "gamma delta"), 0.0);
            assert_eq!(f("", "gamma delta"), 0.0);
            assert_eq!(f("...", "gamma"), 0.0);
        }
    }

    #[test]
    fn single_token_identity_bleu() {
        assert_eq!(bleu("fixed", "fixed"), 1.0);
    }

    #[test]
    fn meteor_fragmentation() {
        // two chunks: "a b" and "d"
        let m = meteor_simple("a b d", "a b c d");
        let p: f64 = 1.0;
        let r: f64 = 0.75;
        let expected = 10.0 * p * r / (r + 9.0 * p) * (1.0 - 0.5 * (2.0f64 / 3.0).powi(3));
        assert!((m - expected).abs() < 1e-15);
    }
}
