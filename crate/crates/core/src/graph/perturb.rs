//! Random structural and feature perturbations: stochastic augmentation,
//! random edge-addition attacks and node-induced subgraph sampling.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use super::{Adjacency, Provenance, SparseGraph, View};
use crate::error::{Error, Result};

/// Converts a budget ratio into a count, `⌈ratio · base⌉`. A small slack
/// absorbs representation error so that e.g. `0.3 · 10` yields 3, not 4.
pub fn budget_count(ratio: f64, base: usize) -> usize {
    let raw = ratio * base as f64;
    if raw <= 0.0 {
        0
    } else {
        (raw - 1e-9 * raw.max(1.0)).ceil() as usize
    }
}

fn check_rate(name: &str, p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1), got {p}")))
    }
}

/// Drops each undirected edge with probability `p_edge` and zeroes each
/// feature column (across all nodes) with probability `p_feat`.
///
/// One uniform draw is consumed per edge and per column regardless of the
/// rates, so streams stay aligned across configurations.
pub fn stochastic_augment<R: Rng + ?Sized>(
    view: &View,
    p_edge: f64,
    p_feat: f64,
    rng: &mut R,
) -> Result<View> {
    check_rate("edge drop rate", p_edge)?;
    check_rate("feature drop rate", p_feat)?;
    let kept: Vec<(usize, usize)> = view
        .adjacency
        .edges()
        .filter(|_| rng.random::<f64>() >= p_edge)
        .collect();
    let masked: Vec<bool> = (0..view.num_features())
        .map(|_| rng.random::<f64>() < p_feat)
        .collect();
    let mut features = view.features.clone();
    if masked.iter().any(|&m| m) {
        for i in 0..features.rows() {
            for (v, &m) in features.row_mut(i).iter_mut().zip(&masked) {
                if m {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(View {
        adjacency: Adjacency::from_edges(view.n(), kept)?,
        features,
        provenance: Provenance::Stochastic,
        drop_edge_rate: Some(p_edge),
        drop_feat_rate: Some(p_feat),
    })
}

/// Adds `⌈ratio · |E|⌉` distinct non-edges chosen uniformly at random.
pub fn random_attack<R: Rng + ?Sized>(
    graph: &SparseGraph,
    ratio: f64,
    rng: &mut R,
) -> Result<View> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("attack ratio must be >= 0, got {ratio}")));
    }
    let adj = &graph.adjacency;
    let n = adj.n();
    let requested = budget_count(ratio, adj.num_edges());
    let available = n * n.saturating_sub(1) / 2 - adj.num_edges();
    if requested > available {
        return Err(Error::NotEnoughNonEdges {
            requested,
            available,
        });
    }
    let added = if requested * 2 > available {
        // Dense regime: enumerate the complement and subsample it.
        let pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !adj.has_edge(i, j))
            .collect();
        let mut picked: Vec<_> = index::sample(rng, pool.len(), requested)
            .into_iter()
            .map(|p| pool[p])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        let mut chosen = HashSet::with_capacity(requested);
        let mut order = Vec::with_capacity(requested);
        while order.len() < requested {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let pair = (i.min(j), i.max(j));
            if adj.has_edge(pair.0, pair.1) || !chosen.insert(pair) {
                continue;
            }
            order.push(pair);
        }
        order
    };
    Ok(View::new(
        adj.with_flips(&added),
        graph.features.clone(),
        Provenance::ExternalAttack,
    ))
}

/// A node-induced subgraph and the original id of each of its nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub view: View,
    /// `nodes[a]` is the original id of subgraph node `a` (ascending).
    pub nodes: Vec<usize>,
}

/// Samples `m` distinct nodes uniformly and returns their induced subgraph.
pub fn sample_subgraph<R: Rng + ?Sized>(
    graph: &SparseGraph,
    m: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    let n = graph.n();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "subgraph size must lie in 1..={n}, got {m}"
        )));
    }
    let mut nodes = index::sample(rng, n, m).into_vec();
    nodes.sort_unstable();
    Ok(Subgraph {
        view: View::new(
            graph.adjacency.induced(&nodes),
            graph.features.select_rows(&nodes),
            Provenance::Clean,
        ),
        nodes,
    })
}
