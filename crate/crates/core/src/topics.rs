//! Per-user topic distributions, TF-IDF topic terms and labelling prompts.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{TopicId, TopicSet};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text;

pub const PROMPT_PREFIX: &str = "what is the mutual topic of the following posts:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDistribution {
    pub user_id: String,
    /// Proportion of the user's posts in each topic, indexed by topic id.
    pub d: Vec<f64>,
    pub total_posts: usize,
}

impl TopicDistribution {
    pub fn proportion(&self, topic: TopicId) -> f64 {
        self.d.get(topic.index()).copied().unwrap_or(0.0)
    }
}

/// One distribution per user in the corpus, including users without posts.
pub fn topic_distributions(topics: &TopicSet, corpus: &Corpus) -> BTreeMap<String, TopicDistribution> {
    let k = topics.n_topics();
    corpus
        .users()
        .keys()
        .map(|user| {
            let posts = corpus.user_posts(user);
            let mut counts = vec![0usize; k];
            for p in posts {
                if let Some(t) = topics.topic_of(p) {
                    counts[t.index()] += 1;
                }
            }
            let total = posts.len();
            let d = counts
                .into_iter()
                .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect();
            (
                user.clone(),
                TopicDistribution {
                    user_id: user.clone(),
                    d,
                    total_posts: total,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicTerms {
    pub topic_id: TopicId,
    pub terms: Vec<TermScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfReport {
    pub top_k: usize,
    pub topics: Vec<TopicTerms>,
}

impl TfidfReport {
    pub fn terms_for(&self, id: TopicId) -> Option<&[TermScore]> {
        self.topics.iter().find(|t| t.topic_id == id).map(|t| t.terms.as_slice())
    }
}

/// Treats each topic's concatenated posts as one document.
pub fn tfidf_topics(topics: &TopicSet, corpus: &Corpus, top_k: usize) -> Result<TfidfReport> {
    if topics.n_topics() == 0 {
        return Err(Error::Degenerate("TF-IDF needs at least one topic".into()));
    }
    let counts: Vec<(HashMap<String, usize>, usize)> = topics
        .topics()
        .iter()
        .map(|t| {
            let mut counts: HashMap<String, usize> = HashMap::new();
            let mut total = 0;
            for p in &t.post_ids {
                if let Some(post) = corpus.post(p) {
                    for term in text::terms(&post.text) {
                        *counts.entry(term).or_default() += 1;
                        total += 1;
                    }
                }
            }
            (counts, total)
        })
        .collect();

    let mut df: HashMap<&str, usize> = HashMap::new();
    for (c, _) in &counts {
        for term in c.keys() {
            *df.entry(term.as_str()).or_default() += 1;
        }
    }
    let n_docs = counts.len() as f64;

    let topics_out = topics
        .topics()
        .iter()
        .zip(&counts)
        .map(|(t, (c, total))| {
            let mut scored: Vec<TermScore> = c
                .iter()
                .map(|(term, &n)| TermScore {
                    term: term.clone(),
                    score: (n as f64 / *total as f64) * (n_docs / df[term.as_str()] as f64).ln(),
                })
                .collect();
            scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
            if scored.first().is_some_and(|s| s.score > 0.0) {
                scored.retain(|s| s.score > 0.0);
            }
            scored.truncate(top_k);
            TopicTerms {
                topic_id: t.id,
                terms: scored,
            }
        })
        .collect();
    Ok(TfidfReport {
        top_k,
        topics: topics_out,
    })
}

/// Prompt text: the fixed prefix, then one sampled post per line.
pub fn export_labeling_prompt(
    topic_id: TopicId,
    topics: &TopicSet,
    corpus: &Corpus,
    n_samples: usize,
    seed: u64,
) -> Result<String> {
    let topic = topics.topic(topic_id).ok_or(Error::UnknownTopic(topic_id))?;
    if topic.post_ids.is_empty() {
        return Err(Error::EmptyTopic(topic_id));
    }
    let size = topic.post_ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, size, n_samples.min(size)).into_vec();
    picked.sort_unstable();

    let mut out = String::from(PROMPT_PREFIX);
    out.push('\n');
    for i in picked {
        let id = &topic.post_ids[i];
        let text = corpus.post(id).map_or("", |p| p.text.as_str());
        out.push_str(&text.split_whitespace().collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Post, UserRecord};

    fn fixture(rows: &[(&str, &str, &str, Option<u32>)]) -> (Corpus, TopicSet) {
        let mut users = BTreeMap::new();
        let posts: Vec<Post> = rows
            .iter()
            .map(|&(pid, uid, text, _)| {
                users.insert(uid.to_string(), UserRecord::new(uid, 0));
                Post { post_id: pid.into(), user_id: uid.into(), text: text.into(), has_attachment: false }
            })
            .collect();
        let (corpus, _) = Corpus::new(posts, users).unwrap();
        let topics = TopicSet::from_labels(rows.iter().map(|r| (r.0.to_string(), r.3)));
        (corpus, topics)
    }

    #[test]
    fn distribution_counts_noise_in_denominator() {
        let mut rows = Vec::new();
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let label = match i {
                0..=3 => Some(0),
                4 => Some(1),
                _ => None,
            };
            rows.push((id.as_str(), "u", "text", label));
        }
        let (corpus, topics) = fixture(&rows);
        let d = &topic_distributions(&topics, &corpus)["u"];
        assert_eq!(d.d, [0.4, 0.1]);
        assert_eq!(d.total_posts, 10);
    }

    #[test]
    fn silent_user_gets_zero_vector() {
        let (corpus, topics) = fixture(&[("p0", "a", "x", Some(0))]);
        let mut users = corpus.users().clone();
        users.insert("quiet".into(), UserRecord::new("quiet", 1));
        let (corpus, _) = Corpus::new(corpus.posts().to_vec(), users).unwrap();
        let dist = topic_distributions(&topics, &corpus);
        assert_eq!(dist["quiet"].d, [0.0]);
        assert_eq!(dist["a"].d, [1.0]);
    }

    #[test]
    fn ubiquitous_term_scores_zero_and_is_dropped() {
        let (corpus, topics) = fixture(&[
            ("p0", "a", "cat dog", Some(0)),
            ("p1", "a", "cat fish", Some(1)),
        ]);
        let report = tfidf_topics(&topics, &corpus, 5).unwrap();
        for t in &report.topics {
            assert!(t.terms.iter().all(|s| s.term != "cat"));
        }
        let all = tfidf_topics(&TopicSet::from_labels([("p0".to_string(), Some(0))]), &corpus, 5).unwrap();
        assert!(all.topics[0].terms.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn prompt_clamps_and_is_deterministic() {
        let rows: Vec<(String, Option<u32>)> = (0..5).map(|i| (format!("p{i}"), Some(0))).collect();
        let texts = ["one", "two\nlines", "three", "four", "five"];
        let full: Vec<(&str, &str, &str, Option<u32>)> =
            rows.iter().zip(texts).map(|((p, l), t)| (p.as_str(), "u", t, *l)).collect();
        let (corpus, topics) = fixture(&full);
        let prompt = export_labeling_prompt(TopicId(0), &topics, &corpus, 20, 1).unwrap();
        assert!(prompt.starts_with(PROMPT_PREFIX));
        assert_eq!(prompt.lines().count(), 6);
        assert!(prompt.contains("two lines"));
        let a = export_labeling_prompt(TopicId(0), &topics, &corpus, 3, 9).unwrap();
        let b = export_labeling_prompt(TopicId(0), &topics, &corpus, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 4);
        assert!(matches!(
            export_labeling_prompt(TopicId(4), &topics, &corpus, 3, 9),
            Err(Error::UnknownTopic(_))
        ));
    }
}
