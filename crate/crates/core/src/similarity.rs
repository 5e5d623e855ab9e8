//! Max-pooled sentence-to-item cosine similarity between posts and a
//! questionnaire, with a random-post baseline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{EmbeddingMatrix, SentenceEmbeddings};
use crate::error::{Error, Result};
use crate::stats::{welch_ttest, TTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub scale_name: String,
    pub per_post_scores: BTreeMap<String, f64>,
    pub mean_score: f64,
    pub n_posts: usize,
}

impl SimilarityReport {
    pub fn scores(&self) -> Vec<f64> {
        self.per_post_scores.values().copied().collect()
    }
}

/// Topic report, baseline report and their Welch comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityComparison {
    pub topic: SimilarityReport,
    pub baseline: SimilarityReport,
    pub test: TTest,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Each post scores the best cosine over its sentences and all items; the
/// report mean is the plain average over posts.
pub fn topic_scale_similarity(
    scale_name: &str,
    post_ids: &[String],
    sentences: &SentenceEmbeddings,
    items: &EmbeddingMatrix,
) -> Result<SimilarityReport> {
    if items.is_empty() {
        return Err(Error::InvalidParams(format!("scale `{scale_name}` has no embedded items")));
    }
    if post_ids.is_empty() {
        return Err(Error::Degenerate("no posts to score".into()));
    }
    let scores: Vec<(String, f64)> = post_ids
        .par_iter()
        .map(|post| {
            let best = sentences
                .sentences(post)
                .flat_map(|s| items.iter().map(move |(_, item)| cosine(s, item)))
                .fold(f64::NEG_INFINITY, f64::max);
            if best == f64::NEG_INFINITY {
                Err(Error::NoSentences(post.clone()))
            } else {
                Ok((post.clone(), best))
            }
        })
        .collect::<Result<_>>()?;
    let per_post_scores: BTreeMap<String, f64> = scores.into_iter().collect();
    let n_posts = per_post_scores.len();
    let mean_score = per_post_scores.values().sum::<f64>() / n_posts as f64;
    Ok(SimilarityReport {
        scale_name: scale_name.to_string(),
        per_post_scores,
        mean_score,
        n_posts,
    })
}

/// Scores `n` posts drawn without replacement from the corpus (minus
/// `exclude`), in sorted post-id order before sampling.
pub fn random_baseline(
    scale_name: &str,
    corpus: &Corpus,
    n: usize,
    seed: u64,
    exclude: Option<&BTreeSet<String>>,
    sentences: &SentenceEmbeddings,
    items: &EmbeddingMatrix,
) -> Result<SimilarityReport> {
    let pool: Vec<String> = corpus
        .sorted_post_ids()
        .into_iter()
        .filter(|p| !exclude.is_some_and(|ex| ex.contains(p)))
        .collect();
    if n > pool.len() {
        return Err(Error::InvalidParams(format!(
            "baseline of {n} posts exceeds the {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<String> = index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    topic_scale_similarity(scale_name, &picked, sentences, items)
}

pub fn compare_to_baseline(topic: &SimilarityReport, baseline: &SimilarityReport) -> Result<TTest> {
    welch_ttest(&topic.scores(), &baseline.scores())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::sentence_key;

    fn sentences(rows: &[(&str, usize, [f64; 3])]) -> SentenceEmbeddings {
        let m = EmbeddingMatrix::from_rows(3, rows.iter().map(|(p, i, v)| (sentence_key(p, *i), v.to_vec()))).unwrap();
        SentenceEmbeddings::new(m)
    }

    fn items(rows: &[[f64; 3]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(3, rows.iter().enumerate().map(|(i, v)| (format!("scale#{i}"), v.to_vec()))).unwrap()
    }

    #[test]
    fn identical_sentence_scores_one() {
        let s = sentences(&[("p1", 0, [0.2, 0.5, 0.1])]);
        let it = items(&[[0.2, 0.5, 0.1], [1.0, 0.0, 0.0]]);
        let r = topic_scale_similarity("s", &["p1".to_string()], &s, &it).unwrap();
        assert!((r.per_post_scores["p1"] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_scores_zero() {
        let s = sentences(&[("p1", 0, [1.0, 0.0, 0.0]), ("p2", 0, [0.0, 1.0, 0.0]), ("p2", 1, [1.0, 1.0, 0.0])]);
        let it = items(&[[0.0, 0.0, 2.0]]);
        let r = topic_scale_similarity("s", &["p1".to_string(), "p2".to_string()], &s, &it).unwrap();
        assert_eq!(r.mean_score, 0.0);
        assert_eq!(r.n_posts, 2);
    }

    #[test]
    fn post_ids_containing_hash_group_correctly() {
        let s = sentences(&[("a#b", 0, [1.0, 0.0, 0.0]), ("a#b", 1, [0.0, 1.0, 0.0])]);
        assert_eq!(s.sentence_count("a#b"), 2);
    }

    #[test]
    fn post_without_sentences_is_named() {
        let s = sentences(&[("p1", 0, [1.0, 0.0, 0.0])]);
        let it = items(&[[1.0, 0.0, 0.0]]);
        let err = topic_scale_similarity("s", &["p9".to_string()], &s, &it).unwrap_err();
        assert!(err.to_string().contains("p9"));
    }

    #[test]
    fn self_comparison_is_null() {
        let s = sentences(&[("p1", 0, [1.0, 0.0, 0.0]), ("p2", 0, [1.0, 1.0, 0.0]), ("p3", 0, [1.0, 3.0, 0.5])]);
        let it = items(&[[1.0, 0.0, 0.0]]);
        let ids: Vec<String> = ["p1", "p2", "p3"].map(String::from).to_vec();
        let r = topic_scale_similarity("s", &ids, &s, &it).unwrap();
        let t = compare_to_baseline(&r, &r).unwrap();
        assert_eq!((t.t, t.p), (0.0, 1.0));
    }
}
