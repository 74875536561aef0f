//! Seed merging: a k-nearest-neighbor graph over the initial seeds, two
//! features per edge, a logistic edge classifier and threshold partitioning.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims, invalid, Error, Result};
use crate::geodesic::{region_geodesic, region_geodesic_from_fields, seed_geodesic_fields};
use crate::grid::UnionFind;
use crate::seeds::SeedRegionSet;
use crate::tensor::{EmbeddingField, LabelMap, ScalarField};

const MAX_ITERS: usize = 10_000;
const GRAD_TOL: f64 = 1e-6;
const LEARNING_RATE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEdge {
    pub i: usize,
    pub j: usize,
    /// `[embedding-mean distance, geodesic distance]`.
    pub features: [f64; 2],
    /// Probability that both seeds lie in the same segment, once classified.
    pub weight: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedGraph {
    pub num_vertices: usize,
    /// Sorted by `(i, j)` with `i < j`, no duplicates.
    pub edges: Vec<SeedEdge>,
}

fn centroids(seeds: &SeedRegionSet) -> Vec<(f64, f64)> {
    let w = seeds.width();
    seeds
        .regions()
        .iter()
        .map(|r| {
            let (sy, sx) = r.iter().fold((0.0, 0.0), |(sy, sx), &p| {
                (sy + (p / w) as f64, sx + (p % w) as f64)
            });
            (sy / r.len() as f64, sx / r.len() as f64)
        })
        .collect()
}

/// Connects each seed to its `k` nearest seeds by centroid distance (ties to
/// the lower index) and symmetrizes the result.
pub fn build_seed_graph(seeds: &SeedRegionSet, k: usize) -> Result<SeedGraph> {
    if seeds.len() < 2 {
        return Err(invalid("a seed graph needs at least two seeds"));
    }
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    let c = centroids(seeds);
    let n = c.len();
    let mut pairs = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((c[i].0 - c[j].0).powi(2) + (c[i].1 - c[j].1).powi(2), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(SeedGraph {
        num_vertices: n,
        edges: pairs
            .into_iter()
            .map(|(i, j)| SeedEdge {
                i,
                j,
                features: [0.0; 2],
                weight: None,
            })
            .collect(),
    })
}

fn region_mean(emb: &EmbeddingField, region: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; emb.depth()];
    for &p in region {
        for (a, &v) in m.iter_mut().zip(emb.pixel(p)) {
            *a += f64::from(v);
        }
    }
    m.iter_mut().for_each(|a| *a /= region.len() as f64);
    m
}

/// Mean embedding vector of each seed region.
pub fn region_means(emb: &EmbeddingField, seeds: &SeedRegionSet) -> Vec<Vec<f64>> {
    seeds.regions().iter().map(|r| region_mean(emb, r)).collect()
}

fn check_dims(emb: &EmbeddingField, strength: &ScalarField, seeds: &SeedRegionSet) -> Result<()> {
    let d = (seeds.height(), seeds.width());
    if (emb.height(), emb.width()) != d || (strength.height(), strength.width()) != d {
        return Err(dims("embedding, edge strength and seeds must share dimensions"));
    }
    Ok(())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Features of a single seed pair: distance between mean embeddings and
/// region-to-region geodesic distance.
pub fn edge_features(
    emb: &EmbeddingField,
    strength: &ScalarField,
    seeds: &SeedRegionSet,
    i: usize,
    j: usize,
) -> Result<[f64; 2]> {
    check_dims(emb, strength, seeds)?;
    if i >= seeds.len() || j >= seeds.len() {
        return Err(invalid("edge endpoint out of range"));
    }
    let (a, b) = (seeds.region(i), seeds.region(j));
    let f1 = euclid(&region_mean(emb, a), &region_mean(emb, b));
    Ok([f1, region_geodesic(strength, a, b)?])
}

/// Fills the features of every graph edge, sharing one geodesic field per seed.
pub fn compute_edge_features(
    emb: &EmbeddingField,
    strength: &ScalarField,
    seeds: &SeedRegionSet,
    graph: &mut SeedGraph,
) -> Result<()> {
    check_dims(emb, strength, seeds)?;
    let means = region_means(emb, seeds);
    let fields = seed_geodesic_fields(strength, seeds)?;
    graph.edges.par_iter_mut().for_each(|e| {
        e.features = [
            euclid(&means[e.i], &means[e.j]),
            region_geodesic_from_fields(&fields, seeds, e.i, e.j),
        ];
    });
    Ok(())
}

/// Which edge features a classifier looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Representation,
    Geodesic,
    #[default]
    Both,
}

impl FeatureSet {
    fn mask(&self) -> [bool; 2] {
        match self {
            FeatureSet::Representation => [true, false],
            FeatureSet::Geodesic => [false, true],
            FeatureSet::Both => [true, true],
        }
    }
}

/// Logistic model over standardized edge features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeClassifier {
    pub weights: [f64; 2],
    pub bias: f64,
    pub mean: [f64; 2],
    pub scale: [f64; 2],
    pub features: FeatureSet,
}

impl EdgeClassifier {
    pub fn logit(&self, f: &[f64; 2]) -> f64 {
        let mask = self.features.mask();
        let mut z = self.bias;
        for c in 0..2 {
            if mask[c] {
                z += self.weights[c] * (f[c] - self.mean[c]) / self.scale[c];
            }
        }
        z
    }

    /// Probability of "same segment".
    pub fn probability(&self, f: &[f64; 2]) -> f64 {
        sigmoid(self.logit(f))
    }

    pub fn accuracy(&self, features: &[[f64; 2]], labels: &[bool]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(f, &y)| (self.probability(f) >= 0.5) == y)
            .count();
        correct as f64 / features.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.weights.iter().chain(&self.mean).chain(&self.scale).all(|v| v.is_finite())
            && self.bias.is_finite();
        if !finite || self.scale.iter().any(|&s| s <= 0.0) {
            return Err(invalid("edge classifier parameters must be finite with positive scales"));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits a logistic regression by full-batch gradient descent on the mean
/// log-loss, stopping when the gradient norm drops below 1e-6 or after a
/// fixed iteration budget.
pub fn train_edge_classifier(
    features: &[[f64; 2]],
    labels: &[bool],
    set: FeatureSet,
) -> Result<EdgeClassifier> {
    if features.len() != labels.len() {
        return Err(dims("one label per feature vector required"));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass("edge training needs both same and different edges".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("edge features must be finite"));
    }
    let n = features.len() as f64;
    let mask = set.mask();
    let mut mean = [0.0; 2];
    let mut scale = [1.0; 2];
    for c in 0..2 {
        if !mask[c] {
            continue;
        }
        mean[c] = features.iter().map(|f| f[c]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f[c] - mean[c]).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            scale[c] = var.sqrt();
        }
    }
    let x: Vec<[f64; 3]> = features
        .iter()
        .map(|f| {
            let mut row = [0.0, 0.0, 1.0];
            for c in 0..2 {
                if mask[c] {
                    row[c] = (f[c] - mean[c]) / scale[c];
                }
            }
            row
        })
        .collect();
    let mut theta = [0.0f64; 3];
    for _ in 0..MAX_ITERS {
        let mut grad = [0.0f64; 3];
        for (row, &y) in x.iter().zip(labels) {
            let z: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let r = sigmoid(z) - f64::from(u8::from(y));
            for c in 0..3 {
                grad[c] += r * row[c];
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < GRAD_TOL {
            break;
        }
        for c in 0..3 {
            theta[c] -= LEARNING_RATE * grad[c];
        }
    }
    Ok(EdgeClassifier {
        weights: [theta[0], theta[1]],
        bias: theta[2],
        mean,
        scale,
        features: set,
    })
}

/// Majority ground-truth label of every seed region (ties to the lower label).
pub fn majority_labels(seeds: &SeedRegionSet, gt: &LabelMap) -> Result<Vec<u32>> {
    if (gt.height(), gt.width()) != (seeds.height(), seeds.width()) {
        return Err(dims("ground truth and seeds differ in size"));
    }
    let mut counts = vec![0usize; gt.num_labels()];
    Ok(seeds
        .regions()
        .iter()
        .map(|r| {
            counts.iter_mut().for_each(|c| *c = 0);
            r.iter().for_each(|&p| counts[gt.labels()[p] as usize] += 1);
            let mut best = 0;
            for (l, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = l;
                }
            }
            best as u32
        })
        .collect())
}

/// Training targets: an edge is "same" iff both endpoint seeds have the same
/// majority ground-truth label.
pub fn edge_ground_truth(graph: &SeedGraph, seeds: &SeedRegionSet, gt: &LabelMap) -> Result<Vec<bool>> {
    let major = majority_labels(seeds, gt)?;
    Ok(graph.edges.iter().map(|e| major[e.i] == major[e.j]).collect())
}

/// Sets every edge weight to the classifier's probability of "same".
pub fn classify_edges(graph: &SeedGraph, clf: &EdgeClassifier) -> SeedGraph {
    SeedGraph {
        num_vertices: graph.num_vertices,
        edges: graph
            .edges
            .iter()
            .map(|e| SeedEdge {
                weight: Some(clf.probability(&e.features)),
                ..e.clone()
            })
            .collect(),
    }
}

/// Unions seeds joined by edges with weight `>= threshold`.
///
/// Output regions are ordered by their smallest member seed and carry that
/// seed's scale tag.
pub fn merge_seeds(seeds: &SeedRegionSet, graph: &SeedGraph, threshold: f64) -> Result<SeedRegionSet> {
    if graph.num_vertices != seeds.len() {
        return Err(dims("graph and seed set disagree on vertex count"));
    }
    let mut uf = UnionFind::new(seeds.len());
    for e in &graph.edges {
        let w = e.weight.ok_or_else(|| invalid("graph edges are not classified"))?;
        if w >= threshold {
            uf.union(e.i, e.j);
        }
    }
    let groups = uf.groups();
    let scales = groups.iter().map(|g| seeds.scales()[g[0]]).collect();
    let regions = groups
        .iter()
        .map(|g| g.iter().flat_map(|&s| seeds.region(s).iter().copied()).collect())
        .collect();
    SeedRegionSet::new(seeds.height(), seeds.width(), regions, scales)
}

pub fn threshold_sweep(seeds: &SeedRegionSet, graph: &SeedGraph, thresholds: &[f64]) -> Result<Vec<SeedRegionSet>> {
    thresholds.iter().map(|&t| merge_seeds(seeds, graph, t)).collect()
}

#[derive(Serialize)]
struct EdgeRow {
    i: usize,
    j: usize,
    f1: f64,
    f2: f64,
    weight: Option<f64>,
}

/// Dumps edges as CSV with header `i,j,f1,f2,weight`.
pub fn write_edge_csv(graph: &SeedGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in &graph.edges {
        w.serialize(EdgeRow {
            i: e.i,
            j: e.j,
            f1: e.features[0],
            f2: e.features[1],
            weight: e.weight,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
