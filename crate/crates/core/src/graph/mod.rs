//! Graph storage and view construction.
//!
//! A [`SparseGraph`] is the raw input `(A, X)` plus optional labels and a
//! train/val/test split. Every augmentation, kNN construction or attack
//! produces a [`View`]: an adjacency/feature pair over the same node set.

mod io;
mod knn;
mod normalize;
mod perturb;

pub use io::{load_attacked_bundle, load_graph_bundle, write_edges, write_graph_bundle, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE};
pub use knn::{knn_select, knn_view, KnnSelection};
pub use normalize::{normalize, NormalizedAdjacency};
pub use perturb::{budget_count, random_attack, sample_subgraph, stochastic_augment, Subgraph};

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMat;
use crate::error::{Error, Result};

/// Symmetric unit-weight adjacency in CSR form. Neighbor lists are sorted,
/// contain no duplicates and never contain the node itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    /// Builds the undirected graph spanned by `edges`. Both orientations of a
    /// pair collapse to one edge and self-loops are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        Ok(Self::from_lists(lists))
    }

    fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let n = lists.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
            indices.extend_from_slice(list);
            indptr.push(indices.len());
        }
        Self { n, indptr, indices }
    }

    /// Reads a dense 0/1 matrix; any entry above one half counts as an edge.
    /// The diagonal is ignored and the result is symmetrized by union.
    pub fn from_dense(m: &DenseMat) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let n = m.rows();
        let edges = (0..n).flat_map(|i| {
            (0..n)
                .filter(move |&j| j != i && m.get(i, j) > 0.5)
                .map(move |j| (i, j))
        });
        Self::from_edges(n, edges)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut m = DenseMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                m.set(i, j, 1.0);
            }
        }
        m
    }

    /// Induced subgraph on `nodes`; node `nodes[a]` becomes node `a`.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.n];
        for (a, &v) in nodes.iter().enumerate() {
            position[v] = a;
        }
        let lists = nodes
            .iter()
            .map(|&v| {
                self.neighbors(v)
                    .iter()
                    .filter_map(|&u| (position[u] != usize::MAX).then_some(position[u]))
                    .collect()
            })
            .collect();
        Self::from_lists(lists)
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.n, edges).expect("permutation keeps ids in range")
    }

    /// Returns a copy with the given pairs toggled (edge ⇄ non-edge).
    pub fn with_flips(&self, flips: &[(usize, usize)]) -> Self {
        let mut lists: Vec<Vec<usize>> = (0..self.n).map(|i| self.neighbors(i).to_vec()).collect();
        for &(i, j) in flips {
            debug_assert_ne!(i, j);
            for (a, b) in [(i, j), (j, i)] {
                match lists[a].binary_search(&b) {
                    Ok(p) => {
                        lists[a].remove(p);
                    }
                    Err(p) => lists[a].insert(p, b),
                }
            }
        }
        Self {
            n: self.n,
            indptr: {
                let mut p = Vec::with_capacity(self.n + 1);
                p.push(0);
                let mut acc = 0;
                for l in &lists {
                    acc += l.len();
                    p.push(acc);
                }
                p
            },
            indices: lists.into_iter().flatten().collect(),
        }
    }

    /// Checks the structural invariants: symmetry, sorted unique neighbor
    /// lists, no self-loops.
    pub fn is_valid(&self) -> bool {
        (0..self.n).all(|i| {
            let nb = self.neighbors(i);
            nb.windows(2).all(|w| w[0] < w[1])
                && nb.iter().all(|&j| j != i && j < self.n && self.has_edge(j, i))
        })
    }
}

/// Split membership of a labelled node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A random 10% / 10% / 80% train / val / test partition of `n` nodes
/// (at least one node each in train and val).
pub fn random_split<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Option<Split>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let tenth = (n / 10).max(1);
    let mut split = vec![Some(Split::Test); n];
    for (pos, &node) in order.iter().enumerate() {
        if pos < tenth {
            split[node] = Some(Split::Train);
        } else if pos < 2 * tenth {
            split[node] = Some(Split::Val);
        }
    }
    split
}

/// The input graph: structure, node features and optional supervision used
/// only by evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    pub adjacency: Adjacency,
    pub features: DenseMat,
    pub labels: Option<Vec<usize>>,
    pub split: Option<Vec<Option<Split>>>,
}

impl SparseGraph {
    pub fn new(adjacency: Adjacency, features: DenseMat) -> Result<Self> {
        if adjacency.n() != features.rows() {
            return Err(Error::Shape(format!(
                "adjacency has {} nodes but features have {} rows",
                adjacency.n(),
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self {
            adjacency,
            features,
            labels: None,
            split: None,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|m| m + 1))
            .unwrap_or(0)
    }

    /// The same graph with a different edge set.
    pub fn with_adjacency(&self, adjacency: Adjacency) -> Result<Self> {
        if adjacency.n() != self.n() {
            return Err(Error::Shape(format!(
                "replacement adjacency has {} nodes, graph has {}",
                adjacency.n(),
                self.n()
            )));
        }
        Ok(Self {
            adjacency,
            ..self.clone()
        })
    }

    /// Node ids assigned to `which`, ascending.
    pub fn split_nodes(&self, which: Split) -> Vec<usize> {
        self.split
            .as_ref()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .filter(|(_, t)| **t == Some(which))
                    .map(|(i, _)| i)
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Where a view came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Clean,
    Stochastic,
    Knn,
    Adversarial,
    ExternalAttack,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Clean => "clean",
            Provenance::Stochastic => "stochastic",
            Provenance::Knn => "knn",
            Provenance::Adversarial => "adversarial",
            Provenance::ExternalAttack => "external-attack",
        };
        f.write_str(s)
    }
}

/// An `(adjacency, features)` pair over a fixed node set.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub adjacency: Adjacency,
    pub features: DenseMat,
    pub provenance: Provenance,
    pub drop_edge_rate: Option<f64>,
    pub drop_feat_rate: Option<f64>,
}

impl View {
    pub fn new(adjacency: Adjacency, features: DenseMat, provenance: Provenance) -> Self {
        debug_assert_eq!(adjacency.n(), features.rows());
        Self {
            adjacency,
            features,
            provenance,
            drop_edge_rate: None,
            drop_feat_rate: None,
        }
    }

    pub fn clean(graph: &SparseGraph) -> Self {
        Self::new(graph.adjacency.clone(), graph.features.clone(), Provenance::Clean)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.features.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_edges_dedups_and_symmetrizes() {
        let a = Adjacency::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap();
        assert_eq!(a.num_edges(), 2);
        assert_eq!(a.neighbors(1), &[0, 2]);
        assert!(a.has_edge(2, 1));
        assert!(!a.has_edge(2, 2));
        assert!(a.is_valid());
        assert_eq!(a.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn from_edges_rejects_out_of_range() {
        assert!(Adjacency::from_edges(2, [(0, 2)]).is_err());
    }

    #[test]
    fn flips_toggle_both_directions() {
        let a = Adjacency::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        let b = a.with_flips(&[(0, 1), (1, 3)]);
        assert_eq!(b.edges().collect::<Vec<_>>(), vec![(1, 3), (2, 3)]);
        assert!(b.is_valid());
    }

    #[test]
    fn induced_relabels_nodes() {
        let a = Adjacency::from_edges(5, [(0, 1), (1, 2), (2, 4), (3, 4)]).unwrap();
        let sub = a.induced(&[4, 2, 0]);
        assert_eq!(sub.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }
}
