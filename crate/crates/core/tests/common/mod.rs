//! Brute-force oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use topicscan::corpus::{Corpus, Post, UserRecord};
use topicscan::embedding::EmbeddingMatrix;

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index<A: Ord + Copy, B: Ord + Copy>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(A, B), usize> = BTreeMap::new();
    let mut rows: BTreeMap<A, usize> = BTreeMap::new();
    let mut cols: BTreeMap<B, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len());
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of all other points, nearest first; ties by index.
fn ranked_neighbours(points: &[Vec<f64>], i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
    order.sort_by(|&x, &y| {
        sq_dist(&points[i], &points[x])
            .total_cmp(&sq_dist(&points[i], &points[y]))
            .then(x.cmp(&y))
    });
    order
}

/// Trustworthiness of `low` as an embedding of `high`, by full ranking.
pub fn trustworthiness(high: &[Vec<f64>], low: &[Vec<f64>], k: usize) -> f64 {
    let n = high.len();
    assert_eq!(n, low.len());
    let mut penalty = 0.0;
    for i in 0..n {
        let high_rank: HashMap<usize, usize> = ranked_neighbours(high, i)
            .into_iter()
            .enumerate()
            .map(|(r, j)| (j, r + 1))
            .collect();
        for j in ranked_neighbours(low, i).into_iter().take(k) {
            let r = high_rank[&j];
            if r > k {
                penalty += (r - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}

pub fn swiss_roll(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.random::<f64>());
            let h = 21.0 * rng.random::<f64>();
            vec![t * t.cos(), h, t * t.sin()]
        })
        .collect()
}

/// Isotropic Gaussian blobs; returns points and planted labels.
pub fn blobs(centres: &[Vec<f64>], per_blob: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (label, c) in centres.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(c.iter().map(|&x| x + sd * rng.sample::<f64, _>(StandardNormal)).collect());
            labels.push(label);
        }
    }
    (points, labels)
}

/// Keys `k0000`, `k0001`, ... so row order equals key order.
pub fn keyed_matrix(points: &[Vec<f64>]) -> EmbeddingMatrix {
    let dim = points[0].len();
    EmbeddingMatrix::from_rows(dim, points.iter().enumerate().map(|(i, p)| (format!("k{i:04}"), p.clone()))).unwrap()
}

pub fn post(post_id: &str, user_id: &str, text: &str) -> Post {
    Post {
        post_id: post_id.into(),
        user_id: user_id.into(),
        text: text.into(),
        has_attachment: false,
    }
}

/// Builds a corpus whose users are exactly those referenced by `posts`.
pub fn corpus_of(posts: Vec<Post>) -> Corpus {
    let users: BTreeMap<String, UserRecord> = posts
        .iter()
        .map(|p| (p.user_id.clone(), UserRecord::new(p.user_id.clone(), 0)))
        .collect();
    Corpus::new(posts, users).unwrap().0
}
