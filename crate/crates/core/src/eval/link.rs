//! Link prediction: held-out edges against sampled non-edges, scored by
//! embedding cosine and summarized as ROC AUC.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::graph::Adjacency;

pub const DEFAULT_HOLDOUT: f64 = 0.1;

/// A link-prediction split. Embeddings meant for scoring should be learned
/// on `train_adjacency`, which lacks the held-out positives.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSplit {
    pub train_adjacency: Adjacency,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl LinkSplit {
    /// Holds out `⌈fraction · |E|⌉` edges (at least one) and samples as many
    /// distinct non-edges of the full graph uniformly.
    pub fn new<R: Rng + ?Sized>(adjacency: &Adjacency, fraction: f64, rng: &mut R) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 0.5) {
            return Err(Error::invalid(format!("holdout fraction must lie in (0, 0.5], got {fraction}")));
        }
        let edges: Vec<(usize, usize)> = adjacency.edges().collect();
        let n = adjacency.n();
        let count = crate::graph::budget_count(fraction, edges.len()).max(1);
        let non_edges = n * n.saturating_sub(1) / 2 - edges.len();
        if edges.len() < 2 || count > non_edges {
            return Err(Error::invalid(format!(
                "graph with {} edges and {non_edges} non-edges is too small to hold out {count} edges",
                edges.len()
            )));
        }
        let mut held: Vec<usize> = index::sample(rng, edges.len(), count).into_vec();
        held.sort_unstable();
        let positives: Vec<(usize, usize)> = held.iter().map(|&e| edges[e]).collect();
        let removed: HashSet<(usize, usize)> = positives.iter().copied().collect();
        let train_adjacency = Adjacency::from_edges(
            n,
            edges.iter().copied().filter(|e| !removed.contains(e)),
        )?;
        let mut chosen = HashSet::with_capacity(count);
        let mut negatives = Vec::with_capacity(count);
        while negatives.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let pair = (i.min(j), i.max(j));
            if i != j && !adjacency.has_edge(i, j) && chosen.insert(pair) {
                negatives.push(pair);
            }
        }
        Ok(Self {
            train_adjacency,
            positives,
            negatives,
        })
    }

    /// AUC of cosine scores under `z`.
    pub fn auc(&self, z: &DenseMat) -> Result<f64> {
        if z.rows() != self.train_adjacency.n() {
            return Err(Error::Shape(format!(
                "{} embedding rows for a {}-node graph",
                z.rows(),
                self.train_adjacency.n()
            )));
        }
        let score = |&(i, j): &(usize, usize)| cosine(z.row(i), z.row(j));
        let pos: Vec<f64> = self.positives.iter().map(score).collect();
        let neg: Vec<f64> = self.negatives.iter().map(score).collect();
        auc(&pos, &neg)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, counting ties as one half. Uses midranks, O((P+N) log).
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("AUC needs at least one positive and one negative score"));
    }
    if positives.iter().chain(negatives).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("link score".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let mid = (start + 1 + end) as f64 / 2.0;
        rank_sum += mid * all[start..end].iter().filter(|x| x.1).count() as f64;
        start = end;
    }
    let (p, n) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
