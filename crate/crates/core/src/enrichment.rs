//! Topic enrichment: candidate pools for offline review and the merge of an
//! accept list back into the topic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{TopicId, TopicSet};
use crate::corpus::Corpus;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::reduction::squared_distance;
use crate::text::tokenize;

pub const DEFAULT_WORDS: [&str; 5] = ["bored", "boring", "boredom", "bore", "bores"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSource {
    Centroid,
    Lexical,
}

impl fmt::Display for PoolSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolSource::Centroid => "centroid",
            PoolSource::Lexical => "lexical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankKey {
    Distance(f64),
    Term(String),
}

impl fmt::Display for RankKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankKey::Distance(d) => d.fmt(f),
            RankKey::Term(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub post_id: String,
    pub rank_key: RankKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub source: PoolSource,
    pub entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn post_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.post_id.as_str())
    }

    /// `post_id,source,rank_key,text` for offline review.
    pub fn to_csv_string(&self, corpus: &Corpus) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["post_id", "source", "rank_key", "text"])?;
        let source = self.source.to_string();
        for e in &self.entries {
            let text = corpus.post(&e.post_id).map_or("", |p| p.text.as_str());
            w.write_record([e.post_id.as_str(), &source, &e.rank_key.to_string(), text])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Degenerate(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output of UTF-8 fields"))
    }
}

fn members(topics: &TopicSet, topic_id: TopicId) -> Result<&[String]> {
    let topic = topics.topic(topic_id).ok_or(Error::UnknownTopic(topic_id))?;
    if topic.post_ids.is_empty() {
        return Err(Error::EmptyTopic(topic_id));
    }
    Ok(&topic.post_ids)
}

/// The `k` non-members nearest to the topic centroid, ascending by
/// `(distance, post_id)`. Distances are computed in `embeddings`' space.
pub fn centroid_candidates(
    topic_id: TopicId,
    topics: &TopicSet,
    embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<CandidatePool> {
    let member_ids = members(topics, topic_id)?;
    let missing: Vec<String> = member_ids.iter().filter(|p| !embeddings.contains(p)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingKeys {
            count: missing.len(),
            shown: missing.into_iter().take(10).collect(),
        });
    }
    let dim = embeddings.dim();
    let mut centroid = vec![0.0; dim];
    for p in member_ids {
        let row = embeddings.get(p).expect("checked above");
        centroid.iter_mut().zip(row).for_each(|(c, v)| *c += v);
    }
    let count = member_ids.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= count);

    let member_set: BTreeSet<&str> = member_ids.iter().map(String::as_str).collect();
    let mut scored: Vec<(f64, &str)> = embeddings
        .keys()
        .par_iter()
        .enumerate()
        .filter(|(_, key)| !member_set.contains(key.as_str()))
        .map(|(i, key)| (squared_distance(embeddings.row(i), &centroid).sqrt(), key.as_str()))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(CandidatePool {
        source: PoolSource::Centroid,
        entries: scored
            .into_iter()
            .map(|(d, p)| PoolEntry {
                post_id: p.to_string(),
                rank_key: RankKey::Distance(d),
            })
            .collect(),
    })
}

/// Non-member posts containing any listed word as a whole token
/// (case-insensitive), ordered by post id. The rank key is the first matching
/// token in the post.
pub fn lexical_candidates(
    corpus: &Corpus,
    topic_id: TopicId,
    topics: &TopicSet,
    words: &[String],
) -> Result<CandidatePool> {
    if words.is_empty() {
        return Err(Error::InvalidParams("lexical word list is empty".into()));
    }
    let member_set: BTreeSet<&str> = members(topics, topic_id)?.iter().map(String::as_str).collect();
    let wanted: BTreeSet<String> = words.iter().flat_map(|w| tokenize(w)).collect();
    let mut entries: Vec<PoolEntry> = corpus
        .posts()
        .par_iter()
        .filter(|p| !member_set.contains(p.post_id.as_str()))
        .filter_map(|p| {
            tokenize(&p.text).into_iter().find(|t| wanted.contains(t)).map(|t| PoolEntry {
                post_id: p.post_id.clone(),
                rank_key: RankKey::Term(t),
            })
        })
        .collect();
    entries.sort_by(|a, b| a.post_id.cmp(&b.post_id));
    Ok(CandidatePool {
        source: PoolSource::Lexical,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedTopic {
    pub topic_id: TopicId,
    pub original_post_ids: Vec<String>,
    pub added_post_ids: Vec<String>,
    /// Share of each user's posts inside the enriched topic, for every user.
    pub user_scores: BTreeMap<String, f64>,
}

impl EnrichedTopic {
    pub fn post_ids(&self) -> BTreeSet<&str> {
        self.original_post_ids
            .iter()
            .chain(&self.added_post_ids)
            .map(String::as_str)
            .collect()
    }
}

/// Merges accepted candidates into the topic. Every accepted id must appear
/// in one of `pools`.
pub fn apply_enrichment(
    topic_id: TopicId,
    topics: &TopicSet,
    corpus: &Corpus,
    pools: &[CandidatePool],
    accept: &BTreeSet<String>,
) -> Result<EnrichedTopic> {
    let original = members(topics, topic_id)?;
    let pooled: BTreeSet<&str> = pools.iter().flat_map(|p| p.post_ids()).collect();
    if let Some(stray) = accept.iter().find(|p| !pooled.contains(p.as_str())) {
        return Err(Error::NotInPools(stray.clone()));
    }
    let original_set: BTreeSet<&str> = original.iter().map(String::as_str).collect();
    let added: Vec<String> = accept
        .iter()
        .filter(|p| !original_set.contains(p.as_str()))
        .cloned()
        .collect();

    let mut enriched = EnrichedTopic {
        topic_id,
        original_post_ids: original.to_vec(),
        added_post_ids: added,
        user_scores: BTreeMap::new(),
    };
    let all = enriched.post_ids();
    let scores = corpus
        .users()
        .keys()
        .map(|u| {
            let posts = corpus.user_posts(u);
            let inside = posts.iter().filter(|p| all.contains(p.as_str())).count();
            let score = if posts.is_empty() { 0.0 } else { inside as f64 / posts.len() as f64 };
            (u.clone(), score)
        })
        .collect();
    enriched.user_scores = scores;
    Ok(enriched)
}

/// One post id per line; blank lines and `#` comments ignored.
pub fn parse_accept_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Post, UserRecord};

    fn corpus(rows: &[(&str, &str, &str)]) -> Corpus {
        let mut users = BTreeMap::new();
        let posts: Vec<Post> = rows
            .iter()
            .map(|&(p, u, t)| {
                users.insert(u.to_string(), UserRecord::new(u, 0));
                Post { post_id: p.into(), user_id: u.into(), text: t.into(), has_attachment: false }
            })
            .collect();
        Corpus::new(posts, users).unwrap().0
    }

    #[test]
    fn centroid_pool_orders_and_clamps() {
        let m = EmbeddingMatrix::from_rows(
            1,
            [("m", 0.0), ("c3", 3.0), ("c1", -1.0), ("c2", 2.0)].map(|(k, v)| (k.to_string(), vec![v])),
        )
        .unwrap();
        let topics = TopicSet::from_labels([("m", Some(0)), ("c1", None), ("c2", None), ("c3", None)].map(|(p, l)| (p.to_string(), l)));
        let pool = centroid_candidates(TopicId(0), &topics, &m, 2).unwrap();
        let ids: Vec<&str> = pool.post_ids().collect();
        assert_eq!(ids, ["c1", "c2"]);
        assert_eq!(centroid_candidates(TopicId(0), &topics, &m, 50).unwrap().entries.len(), 3);
    }

    #[test]
    fn lexical_whole_words_only() {
        let c = corpus(&[
            ("p1", "u", "Why Saturday is so boring?"),
            ("p2", "u", "he was born nearby"),
            ("p3", "u", "BORED again"),
            ("p0", "v", "boring member"),
        ]);
        let topics = TopicSet::from_labels([("p0", Some(0)), ("p1", None), ("p2", None), ("p3", None)].map(|(p, l)| (p.to_string(), l)));
        let words: Vec<String> = DEFAULT_WORDS.map(String::from).to_vec();
        let pool = lexical_candidates(&c, TopicId(0), &topics, &words).unwrap();
        let ids: Vec<&str> = pool.post_ids().collect();
        assert_eq!(ids, ["p1", "p3"]);
        assert_eq!(pool.entries[0].rank_key, RankKey::Term("boring".into()));
        let csv = pool.to_csv_string(&c).unwrap();
        assert!(csv.starts_with("post_id,source,rank_key,text\np1,lexical,boring,Why Saturday is so boring?\n"));
    }

    #[test]
    fn enrichment_adds_and_checks_pools() {
        let c = corpus(&[("p0", "u", "a"), ("p1", "u", "b"), ("p2", "v", "c"), ("p3", "v", "d")]);
        let topics = TopicSet::from_labels([("p0", Some(0)), ("p1", None), ("p2", None), ("p3", None)].map(|(p, l)| (p.to_string(), l)));
        let pool = CandidatePool {
            source: PoolSource::Lexical,
            entries: vec![PoolEntry { post_id: "p2".into(), rank_key: RankKey::Term("c".into()) }],
        };
        let none = apply_enrichment(TopicId(0), &topics, &c, std::slice::from_ref(&pool), &BTreeSet::new()).unwrap();
        assert_eq!(none.user_scores["u"], 0.5);
        assert_eq!(none.user_scores["v"], 0.0);
        let accept = parse_accept_list("p2\n\n");
        let e1 = apply_enrichment(TopicId(0), &topics, &c, std::slice::from_ref(&pool), &accept).unwrap();
        let e2 = apply_enrichment(TopicId(0), &topics, &c, std::slice::from_ref(&pool), &accept).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.user_scores["v"], 0.5);
        let err = apply_enrichment(TopicId(0), &topics, &c, &[pool], &parse_accept_list("p3")).unwrap_err();
        assert!(err.to_string().contains("p3"));
    }
}
