//! Contextual stochastic block models: labeled graphs whose structure and
//! binary bag-of-words features both carry class signal.

use rand::Rng;

use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::graph::{random_split, Adjacency, SparseGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextualSbm {
    pub classes: usize,
    pub nodes_per_class: usize,
    /// Edge probability within a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    pub features: usize,
    /// Probability that a node has a word from its own class's block.
    pub q_in: f64,
    /// Probability that a node has any other word.
    pub q_out: f64,
}

impl Default for ContextualSbm {
    fn default() -> Self {
        Self {
            classes: 3,
            nodes_per_class: 40,
            p_in: 0.08,
            p_out: 0.01,
            features: 60,
            q_in: 0.2,
            q_out: 0.03,
        }
    }
}

impl ContextualSbm {
    pub fn n(&self) -> usize {
        self.classes * self.nodes_per_class
    }

    /// Samples a graph. Node `i` has class `i % classes`; the split is a
    /// random 10% / 10% / 80% train / val / test partition.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SparseGraph> {
        if self.classes < 2 || self.nodes_per_class == 0 || self.features < self.classes {
            return Err(Error::invalid("model needs >= 2 classes, nodes, and >= 1 word per class"));
        }
        let n = self.n();
        let labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if labels[i] == labels[j] { self.p_in } else { self.p_out };
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let block = self.features / self.classes;
        let features = DenseMat::from_fn(n, self.features, |i, j| {
            let own = j / block == labels[i];
            let q = if own { self.q_in } else { self.q_out };
            if rng.random_bool(q) {
                1.0
            } else {
                0.0
            }
        });
        let split = random_split(n, rng);
        let mut g = SparseGraph::new(Adjacency::from_edges(n, edges)?, features)?;
        g.labels = Some(labels);
        g.split = Some(split);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::graph::Split;

    #[test]
    fn sizes_and_homophily() {
        let sbm = ContextualSbm::default();
        let g = sbm.sample(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g.n(), 120);
        assert_eq!(g.num_classes(), 3);
        let labels = g.labels.as_ref().unwrap();
        let same = g.adjacency.edges().filter(|&(i, j)| labels[i] == labels[j]).count();
        assert!(same * 2 > g.adjacency.num_edges());
        assert_eq!(g.split_nodes(Split::Train).len(), 12);
        assert_eq!(g.split_nodes(Split::Val).len(), 12);
        assert_eq!(g.split_nodes(Split::Test).len(), 96);
    }
}
