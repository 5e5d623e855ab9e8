//! Hierarchical density-based clustering and the topic sets built from it.
//!
//! The clusterer follows the usual HDBSCAN recipe: core distances, a minimum
//! spanning tree over mutual reachability distances (dense Prim), the single
//! linkage hierarchy, the condensed tree for `min_cluster_size`, and
//! excess-of-mass selection with the root excluded. Points with no selected
//! ancestor in the condensed tree are noise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::reduction::{exact_knn, squared_distance, ReducedMatrix};

/// Dense topic identifier, `0..n_topics`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub u32);

impl TopicId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Label written for noise in exported assignments.
pub const NOISE_LABEL: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances, counting the point itself.
    /// `None` means "same as `min_cluster_size`".
    pub min_samples: Option<usize>,
    pub min_users: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_cluster_size: 25,
            min_samples: None,
            min_users: 10,
        }
    }
}

impl ClusterParams {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::InvalidParams("min_cluster_size must be at least 2".into()));
        }
        if self.min_samples() == 0 {
            return Err(Error::InvalidParams("min_samples must be positive".into()));
        }
        if self.min_users == 0 {
            return Err(Error::InvalidParams("min_users must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: TopicId,
    /// Member post ids, sorted.
    pub post_ids: Vec<String>,
}

/// A hard assignment of posts to topics, with noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSet {
    assignment: BTreeMap<String, Option<TopicId>>,
    topics: Vec<Topic>,
}

impl TopicSet {
    /// Builds a topic set from per-post cluster labels (`None` = noise).
    ///
    /// Topic ids are assigned densely by decreasing size, ties broken by the
    /// smallest member post id. The incoming label values only group posts.
    pub fn from_labels<L: Ord + Copy>(labels: impl IntoIterator<Item = (String, Option<L>)>) -> Self {
        let mut groups: BTreeMap<L, Vec<String>> = BTreeMap::new();
        let mut assignment = BTreeMap::new();
        for (post, label) in labels {
            if let Some(l) = label {
                groups.entry(l).or_default().push(post.clone());
            }
            assignment.insert(post, None);
        }
        let mut clusters: Vec<Vec<String>> = groups
            .into_values()
            .map(|mut ids| {
                ids.sort();
                ids
            })
            .collect();
        clusters.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
        let topics: Vec<Topic> = clusters
            .into_iter()
            .enumerate()
            .map(|(i, post_ids)| Topic {
                id: TopicId(i as u32),
                post_ids,
            })
            .collect();
        for t in &topics {
            for p in &t.post_ids {
                assignment.insert(p.clone(), Some(t.id));
            }
        }
        TopicSet { assignment, topics }
    }

    pub fn n_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn topic(&self, id: TopicId) -> Option<&Topic> {
        self.topics.get(id.index())
    }

    pub fn assignment(&self) -> &BTreeMap<String, Option<TopicId>> {
        &self.assignment
    }

    /// `None` for noise or unknown posts.
    pub fn topic_of(&self, post_id: &str) -> Option<TopicId> {
        self.assignment.get(post_id).copied().flatten()
    }

    pub fn noise_posts(&self) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(|(_, t)| t.is_none())
            .map(|(p, _)| p.as_str())
    }

    pub fn distinct_users(&self, id: TopicId, corpus: &Corpus) -> usize {
        self.topic(id).map_or(0, |t| {
            t.post_ids
                .iter()
                .filter_map(|p| corpus.post(p).map(|post| post.user_id.as_str()))
                .collect::<BTreeSet<_>>()
                .len()
        })
    }

    /// CSV `post_id,topic_id`, noise written as `-1`, rows in post id order.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("post_id,topic_id\n");
        for (p, t) in &self.assignment {
            let label = t.map_or(NOISE_LABEL, |t| i64::from(t.0));
            out.push_str(&format!("{p},{label}\n"));
        }
        out
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(s.as_bytes());
        let mut labels = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let bad = || Error::parse("<topics csv>", i + 2, "expected `post_id,topic_id`");
            let post = row.get(0).ok_or_else(bad)?.to_string();
            let label: i64 = row.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            labels.push((post, (label >= 0).then_some(label)));
        }
        Ok(TopicSet::from_labels(labels))
    }
}

pub fn hdbscan_cluster(reduced: &ReducedMatrix, params: &ClusterParams) -> Result<TopicSet> {
    cluster_matrix(&reduced.matrix, params)
}

/// Runs the clusterer on any matrix (Euclidean metric).
pub fn cluster_matrix(matrix: &EmbeddingMatrix, params: &ClusterParams) -> Result<TopicSet> {
    params.validate()?;
    if matrix.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, found: 0 });
    }
    let labels = hdbscan_labels(matrix.as_flat(), matrix.dim(), params);
    Ok(TopicSet::from_labels(
        matrix.keys().iter().cloned().zip(labels),
    ))
}

/// Raw HDBSCAN labels over a flat row-major matrix: `Some(cluster)` or noise.
/// Cluster numbers are internal node ids and only meaningful for grouping.
pub fn hdbscan_labels(data: &[f64], dim: usize, params: &ClusterParams) -> Vec<Option<usize>> {
    let n = data.len() / dim;
    let mcs = params.min_cluster_size;
    if n < mcs || n < 2 {
        return vec![None; n];
    }
    let core = core_distances(data, dim, params.min_samples());
    let mst = prim_mst(data, dim, &core);
    let slt = single_linkage(n, &mst);
    let condensed = condense(n, &slt, mcs);
    let selected = select_eom(n, &condensed);
    label_points(n, &condensed, &selected)
}

fn core_distances(data: &[f64], dim: usize, min_samples: usize) -> Vec<f64> {
    let n = data.len() / dim;
    // min_samples includes the point itself
    let k = min_samples.saturating_sub(1).min(n - 1);
    if k == 0 {
        return vec![0.0; n];
    }
    let knn = exact_knn(data, dim, k);
    (0..n).map(|i| knn.neighbors(i).1[k - 1]).collect()
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    a: usize,
    b: usize,
    weight: f64,
}

fn prim_mst(data: &[f64], dim: usize, core: &[f64]) -> Vec<Edge> {
    let n = core.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let row = &data[current * dim..(current + 1) * dim];
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = squared_distance(row, &data[j * dim..(j + 1) * dim]).sqrt();
            let mr = d.max(core[current]).max(core[j]);
            if mr < best[j] {
                best[j] = mr;
                best_from[j] = current;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push(Edge {
            a: best_from[next],
            b: next,
            weight: next_w,
        });
        current = next;
    }
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then((x.a.min(x.b), x.a.max(x.b)).cmp(&(y.a.min(y.b), y.a.max(y.b))))
    });
    edges
}

#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

/// Merges in order; merge `i` creates node `n + i`.
fn single_linkage(n: usize, mst: &[Edge]) -> Vec<Merge> {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        while parent[x] != root {
            let next = parent[x];
            parent[x] = root;
            x = next;
        }
        root
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (i, e) in mst.iter().enumerate() {
        let ra = find(&mut parent, e.a);
        let rb = find(&mut parent, e.b);
        let node = n + i;
        let (left, right) = if ra < rb { (ra, rb) } else { (rb, ra) };
        size[node] = size[ra] + size[rb];
        parent[ra] = node;
        parent[rb] = node;
        merges.push(Merge {
            left,
            right,
            distance: e.weight,
            size: size[node],
        });
    }
    merges
}

#[derive(Debug, Clone, Copy)]
struct CondensedEdge {
    parent: usize,
    child: usize,
    lambda: f64,
    child_size: usize,
}

fn lambda_of(distance: f64) -> f64 {
    // keeps duplicate points finite so stability sums never see inf - inf
    1.0 / distance.max(f64::MIN_POSITIVE.sqrt())
}

/// Condensed tree. Point ids are `0..n`; cluster ids start at `n` (the root).
fn condense(n: usize, slt: &[Merge], min_cluster_size: usize) -> Vec<CondensedEdge> {
    let root = 2 * n - 2;
    let size_of = |node: usize| if node < n { 1 } else { slt[node - n].size };
    let children = |node: usize| {
        let m = &slt[node - n];
        (m.left, m.right)
    };
    let leaves_under = |node: usize, out: &mut Vec<usize>| {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let (l, r) = children(x);
                stack.push(r);
                stack.push(l);
            }
        }
    };

    let mut relabel = vec![usize::MAX; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut out = Vec::new();
    let mut leaves = Vec::new();
    // top-down traversal over nodes that still carry a cluster label
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let (left, right) = children(node);
        let lambda = lambda_of(slt[node - n].distance);
        let parent = relabel[node];
        let (ls, rs) = (size_of(left), size_of(right));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        match (big_l, big_r) {
            (true, true) => {
                for (child, size) in [(left, ls), (right, rs)] {
                    relabel[child] = next_label;
                    out.push(CondensedEdge {
                        parent,
                        child: next_label,
                        lambda,
                        child_size: size,
                    });
                    next_label += 1;
                    queue.push_back(child);
                }
            }
            _ => {
                for (child, big) in [(left, big_l), (right, big_r)] {
                    if big {
                        relabel[child] = parent;
                        queue.push_back(child);
                    } else {
                        leaves.clear();
                        leaves_under(child, &mut leaves);
                        for &p in &leaves {
                            out.push(CondensedEdge {
                                parent,
                                child: p,
                                lambda,
                                child_size: 1,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Excess-of-mass selection; the root is never selected.
fn select_eom(n: usize, tree: &[CondensedEdge]) -> BTreeSet<usize> {
    let Some(max_label) = tree.iter().map(|e| e.parent.max(e.child)).max() else {
        return BTreeSet::new();
    };
    if max_label < n + 1 {
        return BTreeSet::new();
    }
    let n_clusters = max_label - n + 1;
    let mut birth = vec![0.0f64; n_clusters];
    let mut child_clusters: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for e in tree.iter().filter(|e| e.child >= n) {
        birth[e.child - n] = e.lambda;
        child_clusters[e.parent - n].push(e.child);
    }
    let mut stability = vec![0.0f64; n_clusters];
    for e in tree {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * e.child_size as f64;
    }

    let mut selected = vec![true; n_clusters];
    selected[0] = false;
    // children always carry larger labels than their parents
    for c in (1..n_clusters).rev() {
        let subtree: f64 = child_clusters[c].iter().map(|&k| stability[k - n]).sum();
        if subtree > stability[c] {
            selected[c] = false;
            stability[c] = subtree;
        } else {
            let mut stack = child_clusters[c].clone();
            while let Some(k) = stack.pop() {
                selected[k - n] = false;
                stack.extend(child_clusters[k - n].iter().copied());
            }
        }
    }
    (0..n_clusters).filter(|&c| selected[c]).map(|c| c + n).collect()
}

fn label_points(n: usize, tree: &[CondensedEdge], selected: &BTreeSet<usize>) -> Vec<Option<usize>> {
    let max_label = tree.iter().map(|e| e.parent.max(e.child)).max().unwrap_or(n);
    let mut parent_of = vec![usize::MAX; max_label + 1];
    for e in tree {
        parent_of[e.child] = e.parent;
    }
    (0..n)
        .map(|p| {
            let mut node = parent_of[p];
            while node != usize::MAX && node != n {
                if selected.contains(&node) {
                    return Some(node);
                }
                node = parent_of[node];
            }
            None
        })
        .collect()
}

/// Dissolves topics used by fewer than `min_users` distinct users; survivors
/// keep their relative order and are renumbered densely.
pub fn filter_topics(topics: &TopicSet, corpus: &Corpus, min_users: usize) -> TopicSet {
    let mut assignment: BTreeMap<String, Option<TopicId>> =
        topics.assignment.keys().map(|p| (p.clone(), None)).collect();
    let mut kept = Vec::new();
    for t in &topics.topics {
        if topics.distinct_users(t.id, corpus) < min_users {
            continue;
        }
        let id = TopicId(kept.len() as u32);
        for p in &t.post_ids {
            assignment.insert(p.clone(), Some(id));
        }
        kept.push(Topic {
            id,
            post_ids: t.post_ids.clone(),
        });
    }
    TopicSet {
        assignment,
        topics: kept,
    }
}
