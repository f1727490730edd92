//! Cosine k-nearest-neighbor graphs over node features.

use std::cmp::Ordering;

use super::{Adjacency, Provenance, View};
use crate::dense::{gemm, DenseMat};
use crate::error::{Error, Result};

/// Rows of the cosine-similarity matrix computed per block, bounding memory
/// at `BLOCK_ROWS × n` floats.
const BLOCK_ROWS: usize = 256;

/// Directed top-`k` selections: `neighbors[i]` lists the `k` nodes most
/// cosine-similar to `i`, most similar first. Ties go to the lower index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnSelection {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl KnnSelection {
    /// Union symmetrization: `{i, j}` is an edge when either endpoint
    /// selected the other.
    pub fn to_adjacency(&self) -> Adjacency {
        let n = self.neighbors.len();
        let edges = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j)));
        Adjacency::from_edges(n, edges).expect("selections index valid nodes")
    }

    /// Number of directed selections shared with `other`.
    pub fn overlap(&self, other: &KnnSelection) -> usize {
        self.neighbors
            .iter()
            .zip(&other.neighbors)
            .map(|(a, b)| a.iter().filter(|j| b.contains(j)).count())
            .sum()
    }
}

/// Rows scaled to unit length; all-zero rows stay zero, so their cosine
/// similarity to every node is 0.
pub(crate) fn unit_rows(x: &DenseMat) -> DenseMat {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

#[inline]
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Selects the `k` most cosine-similar other nodes for every node.
pub fn knn_select(features: &DenseMat, k: usize) -> Result<KnnSelection> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "kNN needs 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let unit = unit_rows(features);
    let mut neighbors = Vec::with_capacity(n);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    for start in (0..n).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(n);
        let block = unit.select_rows(&(start..end).collect::<Vec<_>>());
        let sims = gemm(&block, false, &unit, true);
        for (r, i) in (start..end).enumerate() {
            scratch.clear();
            scratch.extend(
                sims.row(r)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, &s)| (s, j)),
            );
            scratch.select_nth_unstable_by(k - 1, rank);
            let top = &mut scratch[..k];
            top.sort_unstable_by(rank);
            neighbors.push(top.iter().map(|&(_, j)| j).collect());
        }
    }
    Ok(KnnSelection { k, neighbors })
}

/// The similarity-preserving view: the union-symmetrized cosine kNN graph of
/// `features`, carrying the features through unchanged.
pub fn knn_view(features: &DenseMat, k: usize) -> Result<View> {
    let selection = knn_select(features, k)?;
    Ok(View::new(
        selection.to_adjacency(),
        features.clone(),
        Provenance::Knn,
    ))
}
