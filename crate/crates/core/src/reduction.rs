//! UMAP-style manifold reduction.
//!
//! The pipeline is: exact k-nearest-neighbour graph, fuzzy simplicial
//! membership weights with a per-point bandwidth found by binary search,
//! fuzzy-union symmetrization, and a negative-sampling SGD layout.
//!
//! Everything is deterministic in `(matrix, params)`. Rows are processed in
//! key order (the matrix stores them that way), initial coordinates are drawn
//! from a per-key seed and each epoch's negative samples come from an RNG
//! seeded by `(seed, epoch)`. The kNN search runs on rayon but only ever
//! writes per-row results, so thread count does not change the output.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::hash::{derive_seed, derive_seed_indexed, fnv1a, splitmix64, unit_signed};

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const BANDWIDTH_ITERATIONS: usize = 64;
const NEGATIVE_SAMPLE_RATE: usize = 5;
const REPULSION_STRENGTH: f64 = 1.0;
const INITIAL_ALPHA: f64 = 1.0;
const SPREAD: f64 = 1.0;
const INIT_RANGE: f64 = 10.0;
const GRAD_CLIP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionParams {
    pub target_dim: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Return the input unchanged when it already has `target_dim` columns.
    pub passthrough_if_equal: bool,
}

impl Default for ReductionParams {
    fn default() -> Self {
        ReductionParams {
            target_dim: 10,
            n_neighbors: 15,
            min_dist: 0.1,
            epochs: 200,
            seed: 0,
            passthrough_if_equal: true,
        }
    }
}

impl ReductionParams {
    pub fn validate(&self) -> Result<()> {
        if self.target_dim == 0 {
            return Err(Error::InvalidParams("target_dim must be positive".into()));
        }
        if self.n_neighbors < 2 {
            return Err(Error::InvalidParams("n_neighbors must be at least 2".into()));
        }
        if !(self.min_dist >= 0.0 && self.min_dist.is_finite()) {
            return Err(Error::InvalidParams("min_dist must be finite and >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParams("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// A low-dimensional layout plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub matrix: EmbeddingMatrix,
    pub params: ReductionParams,
}

impl ReducedMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    /// Wraps an existing layout, e.g. one read back from a cache file.
    pub fn from_matrix(matrix: EmbeddingMatrix, params: ReductionParams) -> Self {
        ReducedMatrix { matrix, params }
    }
}

pub fn fit_reduce(matrix: &EmbeddingMatrix, params: &ReductionParams) -> Result<ReducedMatrix> {
    params.validate()?;
    if params.target_dim > matrix.dim() {
        return Err(Error::InvalidParams(format!(
            "target_dim {} exceeds input dimension {}",
            params.target_dim,
            matrix.dim()
        )));
    }
    if params.passthrough_if_equal && params.target_dim == matrix.dim() {
        return Ok(ReducedMatrix {
            matrix: matrix.clone(),
            params: params.clone(),
        });
    }
    let n = matrix.len();
    if n < params.n_neighbors + 1 {
        return Err(Error::TooFewPoints {
            needed: params.n_neighbors + 1,
            found: n,
        });
    }

    // n_neighbors counts the point itself, as in the reference implementation
    let knn = exact_knn(matrix.as_flat(), matrix.dim(), params.n_neighbors - 1);
    let graph = fuzzy_graph(&knn, params.n_neighbors);
    let (a, b) = fit_curve(params.min_dist, SPREAD);
    let mut layout = initial_layout(matrix.keys(), params.target_dim, params.seed);
    optimize_layout(&mut layout, params.target_dim, &graph, a, b, params);

    Ok(ReducedMatrix {
        matrix: EmbeddingMatrix::from_sorted_parts(params.target_dim, matrix.keys().to_vec(), layout),
        params: params.clone(),
    })
}

/// Neighbour lists of an exact kNN search, excluding the point itself.
#[derive(Debug, Clone)]
pub struct Knn {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Knn {
    pub fn len(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, i: usize) -> (&[usize], &[f64]) {
        let r = i * self.k..(i + 1) * self.k;
        (&self.indices[r.clone()], &self.distances[r])
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Brute-force kNN over a flat row-major matrix. Ties are broken by index.
pub fn exact_knn(data: &[f64], dim: usize, k: usize) -> Knn {
    let n = data.len() / dim;
    let k = k.min(n.saturating_sub(1));
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |scratch: &mut Vec<(f64, usize)>, i| {
            let row = &data[i * dim..(i + 1) * dim];
            scratch.clear();
            scratch.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (squared_distance(row, &data[j * dim..(j + 1) * dim]), j)),
            );
            let cmp = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
            if k > 0 && k < scratch.len() {
                scratch.select_nth_unstable_by(k - 1, cmp);
            }
            let head = &mut scratch[..k];
            head.sort_unstable_by(cmp);
            (head.iter().map(|p| p.1).collect(), head.iter().map(|p| p.0.sqrt()).collect())
        })
        .collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (ix, ds) in rows {
        indices.extend(ix);
        distances.extend(ds);
    }
    Knn {
        k,
        indices,
        distances,
    }
}

/// Per-point `(rho, sigma)`: distance to the nearest distinct neighbour and the
/// bandwidth for which the membership weights sum to `log2(n_neighbors)`.
pub fn smooth_knn_dist(distances: &[f64], n_neighbors: usize, mean_distance: f64) -> (f64, f64) {
    let target = (n_neighbors as f64).log2();
    let rho = distances.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0_f64, f64::INFINITY, 1.0_f64);
    for _ in 0..BANDWIDTH_ITERATIONS {
        let psum: f64 = distances
            .iter()
            .map(|&d| {
                let excess = d - rho;
                if excess > 0.0 {
                    (-excess / mid).exp()
                } else {
                    1.0
                }
            })
            .sum();
        if (psum - target).abs() < SMOOTH_K_TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    let local_mean = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    let floor = if rho > 0.0 { local_mean } else { mean_distance };
    (rho, mid.max(MIN_K_DIST_SCALE * floor))
}

/// Symmetric weighted edge list, both directions present, sorted by `(head, tail)`.
#[derive(Debug, Clone)]
pub struct FuzzyGraph {
    pub heads: Vec<usize>,
    pub tails: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn fuzzy_graph(knn: &Knn, n_neighbors: usize) -> FuzzyGraph {
    let n = knn.len();
    let mean_distance = knn.distances.iter().sum::<f64>() / knn.distances.len().max(1) as f64;
    let mut directed: HashMap<(usize, usize), f64> = HashMap::with_capacity(n * knn.k);
    for i in 0..n {
        let (idx, dist) = knn.neighbors(i);
        let (rho, sigma) = smooth_knn_dist(dist, n_neighbors, mean_distance);
        for (&j, &d) in idx.iter().zip(dist) {
            let excess = d - rho;
            let w = if excess <= 0.0 || sigma == 0.0 { 1.0 } else { (-excess / sigma).exp() };
            if w > 0.0 {
                directed.insert((i, j), w);
            }
        }
    }
    // fuzzy union: w_ij + w_ji - w_ij * w_ji
    let mut sym: Vec<((usize, usize), f64)> = Vec::with_capacity(directed.len() * 2);
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let s = w + back - w * back;
        sym.push(((i, j), s));
        if !directed.contains_key(&(j, i)) {
            sym.push(((j, i), s));
        }
    }
    sym.sort_unstable_by_key(|e| e.0);
    FuzzyGraph {
        heads: sym.iter().map(|e| e.0 .0).collect(),
        tails: sym.iter().map(|e| e.0 .1).collect(),
        weights: sym.iter().map(|e| e.1).collect(),
    }
}

/// Fits `1 / (1 + a x^(2b))` to the offset-exponential target curve by
/// damped Gauss-Newton (Levenberg-Marquardt) on 300 points in `[0, 3 spread]`.
pub fn fit_curve(min_dist: f64, spread: f64) -> (f64, f64) {
    const POINTS: usize = 300;
    let xs: Vec<f64> = (0..POINTS)
        .map(|i| 3.0 * spread * i as f64 / (POINTS - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };

    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let denom = 1.0 + a * p;
            let r = 1.0 / denom - y;
            let da = -p / (denom * denom);
            let db = -a * p * 2.0 * x.ln() / (denom * denom);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let c = sse(na, nb);
                if c < cost {
                    let done = (cost - c) < 1e-15 * cost.max(1e-300);
                    a = na;
                    b = nb;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = !done;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn initial_layout(keys: &[String], dim: usize, seed: u64) -> Vec<f64> {
    let init_seed = derive_seed(seed, "umap-init");
    let mut out = Vec::with_capacity(keys.len() * dim);
    for key in keys {
        let base = splitmix64(init_seed ^ fnv1a(key.as_bytes()));
        for d in 0..dim {
            out.push(INIT_RANGE * unit_signed(splitmix64(base.wrapping_add(d as u64))));
        }
    }
    out
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

fn optimize_layout(
    emb: &mut [f64],
    dim: usize,
    graph: &FuzzyGraph,
    a: f64,
    b: f64,
    params: &ReductionParams,
) {
    let n = emb.len() / dim;
    let epochs = params.epochs;
    let max_w = graph.weights.iter().copied().fold(0.0, f64::max);
    if max_w <= 0.0 {
        return;
    }
    // edges too weak to be sampled even once are dropped
    let cutoff = max_w / epochs as f64;
    let edges: Vec<(usize, usize, f64)> = graph
        .heads
        .iter()
        .zip(&graph.tails)
        .zip(&graph.weights)
        .filter(|(_, &w)| w >= cutoff)
        .map(|((&h, &t), &w)| (h, t, max_w / w))
        .collect();

    let eps_neg: Vec<f64> = edges.iter().map(|e| e.2 / NEGATIVE_SAMPLE_RATE as f64).collect();
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let mut next_negative = eps_neg.clone();
    let mut current = vec![0.0; dim];
    let mut delta = vec![0.0; dim];
    let sgd_seed = derive_seed(params.seed, "umap-sgd");

    for epoch in 0..epochs {
        let alpha = INITIAL_ALPHA * (1.0 - epoch as f64 / epochs as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(sgd_seed, epoch as u64));
        let now = epoch as f64;
        for (e, &(j, k, eps)) in edges.iter().enumerate() {
            if next_sample[e] > now {
                continue;
            }
            current.copy_from_slice(&emb[j * dim..(j + 1) * dim]);
            let other = &emb[k * dim..(k + 1) * dim];
            let d2 = squared_distance(&current, other);
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for d in 0..dim {
                delta[d] = clip(coeff * (current[d] - other[d])) * alpha;
            }
            for d in 0..dim {
                current[d] += delta[d];
                emb[k * dim + d] -= delta[d];
            }
            next_sample[e] += eps;

            let n_neg = ((now - next_negative[e]) / eps_neg[e]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let s = rng.random_range(0..n);
                let other = &emb[s * dim..(s + 1) * dim];
                let d2 = squared_distance(&current, other);
                let coeff = if d2 > 0.0 {
                    2.0 * REPULSION_STRENGTH * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                } else if s == j {
                    continue;
                } else {
                    0.0
                };
                for d in 0..dim {
                    let g = if coeff > 0.0 { clip(coeff * (current[d] - other[d])) } else { GRAD_CLIP };
                    current[d] += g * alpha;
                }
            }
            next_negative[e] += n_neg as f64 * eps_neg[e];
            emb[j * dim..(j + 1) * dim].copy_from_slice(&current);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dim: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            dim,
            (0..n).map(|i| {
                (
                    format!("k{i:04}"),
                    (0..dim).map(|d| ((i * 7 + d * 13) % 17) as f64 + 0.1 * d as f64).collect(),
                )
            }),
        )
        .unwrap()
    }

    #[test]
    fn passthrough_when_dims_match() {
        let m = grid(30, 4);
        let params = ReductionParams { target_dim: 4, ..Default::default() };
        assert_eq!(fit_reduce(&m, &params).unwrap().matrix, m);
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = grid(30, 4);
        let params = ReductionParams { target_dim: 5, ..Default::default() };
        assert!(matches!(fit_reduce(&m, &params), Err(Error::InvalidParams(_))));
        let params = ReductionParams { target_dim: 2, n_neighbors: 30, ..Default::default() };
        assert!(matches!(fit_reduce(&m, &params), Err(Error::TooFewPoints { needed: 31, found: 30 })));
    }

    #[test]
    fn curve_fit_matches_reference_defaults() {
        // the reference implementation's curve fit for min_dist = 0.1, spread = 1
        let (a, b) = fit_curve(0.1, 1.0);
        assert!((a - 1.577).abs() < 2e-3, "a = {a}");
        assert!((b - 0.8951).abs() < 2e-3, "b = {b}");
    }

    #[test]
    fn bandwidth_hits_target() {
        let d = [0.5, 0.8, 1.0, 1.3, 1.5, 2.0, 2.2];
        let (rho, sigma) = smooth_knn_dist(&d, 8, 1.0);
        assert_eq!(rho, 0.5);
        let psum: f64 = d.iter().map(|&x| (-(x - rho).max(0.0) / sigma).exp()).sum();
        assert!((psum - 3.0).abs() < 1e-4, "psum {psum}");
    }

    #[test]
    fn knn_excludes_self_and_orders_ties_by_index() {
        let data = [0.0, 1.0, 2.0, 3.0, 1.0];
        let knn = exact_knn(&data, 1, 2);
        let (idx, dist) = knn.neighbors(1);
        assert_eq!(idx, [4, 0]);
        assert_eq!(dist, [0.0, 1.0]);
        let (idx, _) = knn.neighbors(2);
        assert_eq!(idx, [1, 3]);
    }

    #[test]
    fn graph_is_symmetric() {
        let m = grid(40, 3);
        let knn = exact_knn(m.as_flat(), 3, 5);
        let g = fuzzy_graph(&knn, 6);
        let map: HashMap<(usize, usize), f64> = g
            .heads
            .iter()
            .zip(&g.tails)
            .zip(&g.weights)
            .map(|((&h, &t), &w)| ((h, t), w))
            .collect();
        for (&(h, t), &w) in &map {
            assert_eq!(map[&(t, h)], w);
            assert!(w > 0.0 && w <= 1.0);
        }
    }

    #[test]
    fn reduce_is_deterministic_and_finite() {
        let m = grid(60, 6);
        let params = ReductionParams { target_dim: 2, n_neighbors: 8, epochs: 50, seed: 3, ..Default::default() };
        let r1 = fit_reduce(&m, &params).unwrap();
        let r2 = fit_reduce(&m, &params).unwrap();
        let bits = |r: &ReducedMatrix| r.matrix.as_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r1), bits(&r2));
        assert!(r1.matrix.as_flat().iter().all(|x| x.is_finite()));
        assert_eq!(r1.dim(), 2);
        for d in 0..2 {
            let col: Vec<f64> = (0..r1.len()).map(|i| r1.matrix.row(i)[d]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() > 0.0);
        }
        let other_seed = fit_reduce(&m, &ReductionParams { seed: 4, ..params }).unwrap();
        assert_ne!(bits(&r1), bits(&other_seed));
    }
}
