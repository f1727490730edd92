//! Gradient-driven adversarial views: loss gradients with respect to the
//! adjacency and features, budgeted edge flips, and the feature mask.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::contrastive::pairwise_loss;
use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::graph::{budget_count, Adjacency, Provenance, View};
use crate::model::{encode, GraphInput, ModelParams};

/// Perturbation budgets as ratios: structural flips relative to the edge
/// count of view 1, feature changes relative to its nonzero feature count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub delta_a_ratio: f64,
    pub delta_x_ratio: f64,
}

impl PerturbationBudget {
    pub fn new(delta_a_ratio: f64, delta_x_ratio: f64) -> Result<Self> {
        for (name, r) in [("delta_a_ratio", delta_a_ratio), ("delta_x_ratio", delta_x_ratio)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(Self {
            delta_a_ratio,
            delta_x_ratio,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.delta_a_ratio == 0.0 && self.delta_x_ratio == 0.0
    }

    pub fn edge_count(&self, adjacency: &Adjacency) -> usize {
        budget_count(self.delta_a_ratio, adjacency.num_edges())
    }

    pub fn feature_count(&self, features: &DenseMat) -> usize {
        budget_count(self.delta_x_ratio, features.count_nonzero())
    }
}

/// How the adversarial view perturbs features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeaturePerturbation {
    /// Zero out present features whose gradient is most negative.
    #[default]
    Mask,
    /// Flip binary entries in the loss-increasing direction.
    Flip,
    None,
}

impl FeaturePerturbation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mask" => Some(Self::Mask),
            "flip" => Some(Self::Flip),
            "none" => Some(Self::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mask => "mask",
            Self::Flip => "flip",
            Self::None => "none",
        }
    }
}

/// Loss gradients summed over both stochastic views.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    /// `n × n`, symmetrized with a zero diagonal.
    pub g_a: DenseMat,
    /// `n × F`.
    pub g_x: DenseMat,
}

/// Gradients of the two-view loss with respect to each view's adjacency and
/// features, under frozen parameters.
pub fn compute_gradients(
    params: &ModelParams,
    view1: &View,
    view2: &View,
    tau: f64,
    dense_limit: usize,
) -> Result<GradientPair> {
    if view1.n() != view2.n() || view1.num_features() != view2.num_features() {
        return Err(Error::Shape("views differ in size".into()));
    }
    let n = view1.n();
    if n > dense_limit {
        return Err(Error::invalid(format!(
            "{n} nodes exceed the dense attack limit of {dense_limit}; sample a smaller subgraph"
        )));
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let in1 = GraphInput::dense(view1, &mut tape)?;
    let in2 = GraphInput::dense(view2, &mut tape)?;
    let z1 = encode(params, &vars, &in1, &mut tape)?;
    let z2 = encode(params, &vars, &in2, &mut tape)?;
    let loss = pairwise_loss(z1, z2, &vars, tau, &mut tape)?;
    let mut grads = tape.backward(loss)?;
    drop(tape);

    let (GraphInput::Dense { adjacency: a1, features: x1, .. }, GraphInput::Dense { adjacency: a2, features: x2, .. }) = (in1, in2) else {
        unreachable!("dense inputs were requested");
    };
    let mut g_a = grads.take(a1);
    g_a.axpy(1.0, &grads.take(a2));
    let mut g_x = grads.take(x1);
    g_x.axpy(1.0, &grads.take(x2));
    for i in 0..n {
        g_a.set(i, i, 0.0);
        for j in i + 1..n {
            let s = 0.5 * (g_a.get(i, j) + g_a.get(j, i));
            g_a.set(i, j, s);
            g_a.set(j, i, s);
        }
    }
    Ok(GradientPair { g_a, g_x })
}

/// A ranked candidate: larger score first, then lexicographically smaller
/// position.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    score: f64,
    at: (usize, usize),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.at.cmp(&self.at))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `count` best candidates in rank order.
fn top_candidates(candidates: impl Iterator<Item = Candidate>, count: usize) -> Vec<(usize, usize)> {
    if count == 0 {
        return Vec::new();
    }
    let mut heap = BinaryHeap::with_capacity(count + 1);
    for c in candidates {
        heap.push(Reverse(c));
        if heap.len() > count {
            heap.pop();
        }
    }
    let mut best: Vec<Candidate> = heap.into_iter().map(|Reverse(c)| c).collect();
    best.sort_unstable_by(|a, b| b.cmp(a));
    best.into_iter().map(|c| c.at).collect()
}

/// Picks up to `count` edge flips: non-edges with positive gradient are
/// added and edges with negative gradient deleted, ranked jointly by how
/// much they increase the loss. Returns the pairs `(i, j)`, `i < j`, in
/// rank order.
pub fn select_edge_flips(g_a: &DenseMat, adjacency: &Adjacency, count: usize) -> Vec<(usize, usize)> {
    let n = adjacency.n();
    let candidates = (0..n).flat_map(move |i| {
        (i + 1..n).filter_map(move |j| {
            let g = g_a.get(i, j);
            let score = if adjacency.has_edge(i, j) { -g } else { g };
            (score > 0.0).then_some(Candidate { score, at: (i, j) })
        })
    });
    top_candidates(candidates, count)
}

/// Applies the budgeted edge flips to `adjacency`.
pub fn structural_perturb(
    g_a: &DenseMat,
    adjacency: &Adjacency,
    budget: &PerturbationBudget,
) -> Result<Adjacency> {
    if g_a.shape() != (adjacency.n(), adjacency.n()) {
        return Err(Error::Shape(format!(
            "gradient {:?} does not match {} nodes",
            g_a.shape(),
            adjacency.n()
        )));
    }
    let flips = select_edge_flips(g_a, adjacency, budget.edge_count(adjacency));
    Ok(adjacency.with_flips(&flips))
}

/// Positions `(i, j)` whose feature is zeroed by the adversarial mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMask {
    pub rows: usize,
    pub cols: usize,
    pub masked: Vec<(usize, usize)>,
}

impl FeatureMask {
    /// Binary matrix with 0 at masked positions and 1 elsewhere.
    pub fn to_dense(&self) -> DenseMat {
        let mut m = DenseMat::filled(self.rows, self.cols, 1.0);
        for &(i, j) in &self.masked {
            m.set(i, j, 0.0);
        }
        m
    }

    /// `M ⊙ x`.
    pub fn apply(&self, x: &DenseMat) -> DenseMat {
        let mut out = x.clone();
        for &(i, j) in &self.masked {
            out.set(i, j, 0.0);
        }
        out
    }
}

/// Masks the present features (`x > 0`) with the most negative gradients,
/// up to `⌈delta_x_ratio · nnz(x)⌉` of them.
pub fn adversarial_feature_mask(
    g_x: &DenseMat,
    x: &DenseMat,
    budget: &PerturbationBudget,
) -> Result<FeatureMask> {
    if g_x.shape() != x.shape() {
        return Err(Error::Shape(format!("gradient {:?} vs features {:?}", g_x.shape(), x.shape())));
    }
    let candidates = (0..x.rows()).flat_map(|i| {
        (0..x.cols()).filter_map(move |j| {
            let g = g_x.get(i, j);
            (x.get(i, j) > 0.0 && g < 0.0).then_some(Candidate { score: -g, at: (i, j) })
        })
    });
    Ok(FeatureMask {
        rows: x.rows(),
        cols: x.cols(),
        masked: top_candidates(candidates, budget.feature_count(x)),
    })
}

/// Comparator to masking: flips binary entries, `0 → 1` where the gradient
/// is positive and `1 → 0` where it is negative, ranked jointly by
/// `|gradient|`.
pub fn flip_feature_perturb(
    g_x: &DenseMat,
    x: &DenseMat,
    budget: &PerturbationBudget,
) -> Result<DenseMat> {
    if g_x.shape() != x.shape() {
        return Err(Error::Shape(format!("gradient {:?} vs features {:?}", g_x.shape(), x.shape())));
    }
    let candidates = (0..x.rows()).flat_map(|i| {
        (0..x.cols()).filter_map(move |j| {
            let g = g_x.get(i, j);
            let score = if x.get(i, j) > 0.0 { -g } else { g };
            (score > 0.0).then_some(Candidate { score, at: (i, j) })
        })
    });
    let mut out = x.clone();
    for (i, j) in top_candidates(candidates, budget.feature_count(x)) {
        out.set(i, j, if x.get(i, j) > 0.0 { 0.0 } else { 1.0 });
    }
    Ok(out)
}

/// `(A_adv, M ⊙ X¹)` as a view.
pub fn assemble_adversarial_view(adjacency: Adjacency, x1: &DenseMat, mask: &FeatureMask) -> Result<View> {
    if adjacency.n() != x1.rows() || (mask.rows, mask.cols) != x1.shape() {
        return Err(Error::Shape("adversarial view parts disagree in size".into()));
    }
    Ok(View::new(adjacency, mask.apply(x1), Provenance::Adversarial))
}

/// Builds the adversarial view for `view1` given the paired `view2`.
///
/// With both budgets zero no gradients are computed and the result is
/// `view1` relabeled as adversarial.
pub fn generate_adversarial_view(
    params: &ModelParams,
    view1: &View,
    view2: &View,
    tau: f64,
    budget: &PerturbationBudget,
    features: FeaturePerturbation,
    dense_limit: usize,
) -> Result<View> {
    let feature_budget = match features {
        FeaturePerturbation::None => PerturbationBudget { delta_x_ratio: 0.0, ..*budget },
        _ => *budget,
    };
    if feature_budget.is_zero() {
        return Ok(View::new(view1.adjacency.clone(), view1.features.clone(), Provenance::Adversarial));
    }
    let grads = compute_gradients(params, view1, view2, tau, dense_limit)?;
    let adjacency = structural_perturb(&grads.g_a, &view1.adjacency, &feature_budget)?;
    match features {
        FeaturePerturbation::Flip => Ok(View::new(
            adjacency,
            flip_feature_perturb(&grads.g_x, &view1.features, &feature_budget)?,
            Provenance::Adversarial,
        )),
        _ => {
            let mask = adversarial_feature_mask(&grads.g_x, &view1.features, &feature_budget)?;
            assemble_adversarial_view(adjacency, &view1.features, &mask)
        }
    }
}

#[cfg(test)]
mod tests;
