use super::Adjacency;
use crate::dense::DenseMat;
use crate::sparse::CsrMatrix;

/// `Ĥ = D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = diag(d + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrix: CsrMatrix,
    /// Degree including the self-loop, `d_i + 1`.
    pub degrees: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn to_dense(&self) -> DenseMat {
        self.matrix.to_dense()
    }
}

pub fn normalize(adjacency: &Adjacency) -> NormalizedAdjacency {
    let n = adjacency.n();
    let degrees: Vec<f64> = (0..n).map(|i| adjacency.degree(i) as f64 + 1.0).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let rows = (0..n)
        .map(|i| {
            let nb = adjacency.neighbors(i);
            let mut row = Vec::with_capacity(nb.len() + 1);
            let mut self_done = false;
            for &j in nb {
                if !self_done && j > i {
                    row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                    self_done = true;
                }
                row.push((j, inv_sqrt[i] * inv_sqrt[j]));
            }
            if !self_done {
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
            }
            row
        })
        .collect();
    NormalizedAdjacency {
        matrix: CsrMatrix::from_rows(n, rows),
        degrees,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense reference: builds `A + I`, row sums, then scales entry-wise.
    fn dense_oracle(a: &DenseMat) -> DenseMat {
        let n = a.rows();
        let mut ai = a.clone();
        for i in 0..n {
            ai.add_at(i, i, 1.0);
        }
        let d: Vec<f64> = (0..n).map(|i| ai.row(i).iter().sum()).collect();
        DenseMat::from_fn(n, n, |i, j| ai.get(i, j) / (d[i].sqrt() * d[j].sqrt()))
    }

    #[test]
    fn isolated_node() {
        let h = normalize(&Adjacency::empty(1));
        assert_eq!(h.to_dense(), DenseMat::from_rows(&[vec![1.0]]).unwrap());
    }

    #[test]
    fn two_node_path() {
        let h = normalize(&Adjacency::from_edges(2, [(0, 1)]).unwrap()).to_dense();
        for v in h.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn random_graph_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10;
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(0.3))
            .collect();
        let adj = Adjacency::from_edges(n, edges).unwrap();
        let h = normalize(&adj);
        let oracle = dense_oracle(&adj.to_dense());
        let got = h.to_dense();
        for (a, b) in got.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        for v in h.matrix.to_dense().as_slice() {
            assert!(*v >= 0.0 && *v <= 1.0);
        }
        assert_eq!(got, got.transpose());
    }
}
