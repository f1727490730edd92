//! Attack diagnostics: where gradient-chosen edge flips land relative to
//! degree and feature similarity, and an exact decomposition of how one
//! added edge moves a node's linear-GCN embedding.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{compute_gradients, select_edge_flips};
use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::eval::cosine;
use crate::graph::{budget_count, SparseGraph, View};
use crate::model::{EncoderMode, EncoderParams, ModelParams, ProjectionParams};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAction {
    Add,
    Delete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub i: usize,
    pub j: usize,
    /// Sum of clean-graph degrees (without self-loops).
    pub degree_sum: usize,
    pub feature_cosine: f64,
    pub gradient: f64,
    /// What flipping the pair would do.
    pub action: FlipAction,
    /// Drawn in the uniform pair sample (the population estimate).
    pub sampled: bool,
    /// Chosen by the budgeted structural attack.
    pub selected: bool,
}

/// Decodes pair number `p` into `(i, j)`, `i < j`, given the number of
/// pairs preceding each row.
fn decode_pair(p: usize, row_start: &[usize]) -> (usize, usize) {
    let i = row_start.partition_point(|&s| s <= p) - 1;
    (i, i + 1 + (p - row_start[i]))
}

/// Computes the adjacency gradient of the two-view loss with both views set
/// to the clean graph, selects the budgeted flips, and emits one record per
/// pair in a uniform sample of `sample_size` pairs plus every selected pair,
/// ordered by `(i, j)`.
pub fn gradient_scatter<R: Rng + ?Sized>(
    graph: &SparseGraph,
    params: &ModelParams,
    config: &TrainConfig,
    sample_size: usize,
    rng: &mut R,
) -> Result<Vec<ScatterRecord>> {
    let n = graph.n();
    let clean = View::clean(graph);
    let grads = compute_gradients(params, &clean, &clean, config.tau, config.dense_attack_limit)?;
    let adj = &graph.adjacency;
    let selected = select_edge_flips(&grads.g_a, adj, budget_count(config.delta_a_ratio, adj.num_edges()));

    let total_pairs = n * n.saturating_sub(1) / 2;
    let row_start: Vec<usize> = (0..n).scan(0, |acc, i| {
        let start = *acc;
        *acc += n - 1 - i;
        Some(start)
    }).collect();
    let sampled: Vec<(usize, usize)> = index::sample(rng, total_pairs, sample_size.min(total_pairs))
        .into_iter()
        .map(|p| decode_pair(p, &row_start))
        .collect();

    let mut pairs: Vec<(usize, usize, bool, bool)> = sampled
        .iter()
        .map(|&(i, j)| (i, j, true, false))
        .chain(selected.iter().map(|&(i, j)| (i, j, false, true)))
        .collect();
    pairs.sort_unstable();
    let mut merged: Vec<(usize, usize, bool, bool)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        match merged.last_mut() {
            Some(last) if (last.0, last.1) == (p.0, p.1) => {
                last.2 |= p.2;
                last.3 |= p.3;
            }
            _ => merged.push(p),
        }
    }
    let x = &graph.features;
    Ok(merged
        .into_iter()
        .map(|(i, j, sampled, selected)| ScatterRecord {
            i,
            j,
            degree_sum: adj.degree(i) + adj.degree(j),
            feature_cosine: cosine(x.row(i), x.row(j)),
            gradient: grads.g_a.get(i, j),
            action: if adj.has_edge(i, j) { FlipAction::Delete } else { FlipAction::Add },
            sampled,
            selected,
        })
        .collect())
}

/// Means over selected pairs versus the uniform pair sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterSummary {
    pub selected: usize,
    pub sampled: usize,
    pub selected_mean_degree_sum: f64,
    pub population_mean_degree_sum: f64,
    pub selected_mean_cosine: f64,
    pub population_mean_cosine: f64,
}

impl ScatterSummary {
    pub fn from_records(records: &[ScatterRecord]) -> Self {
        let mean = |keep: &dyn Fn(&ScatterRecord) -> bool, f: &dyn Fn(&ScatterRecord) -> f64| {
            let (s, c) = records
                .iter()
                .filter(|r| keep(r))
                .fold((0.0, 0usize), |(s, c), r| (s + f(r), c + 1));
            if c == 0 { f64::NAN } else { s / c as f64 }
        };
        let deg = |r: &ScatterRecord| r.degree_sum as f64;
        let cos = |r: &ScatterRecord| r.feature_cosine;
        Self {
            selected: records.iter().filter(|r| r.selected).count(),
            sampled: records.iter().filter(|r| r.sampled).count(),
            selected_mean_degree_sum: mean(&|r| r.selected, &deg),
            population_mean_degree_sum: mean(&|r| r.sampled, &deg),
            selected_mean_cosine: mean(&|r| r.selected, &cos),
            population_mean_cosine: mean(&|r| r.sampled, &cos),
        }
    }

    /// Selected flips sit at lower degree and lower feature similarity than
    /// the population.
    pub fn favours_low_degree_dissimilar(&self) -> bool {
        self.selected_mean_degree_sum < self.population_mean_degree_sum
            && self.selected_mean_cosine < self.population_mean_cosine
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_scatter(records: &[ScatterRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "i\tj\tdegree_sum\tfeature_cosine\tgradient\taction\tsampled\tselected").map_err(io)?;
    for r in records {
        let action = match r.action {
            FlipAction::Add => "add",
            FlipAction::Delete => "delete",
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{action}\t{}\t{}",
            r.i, r.j, r.degree_sum, r.feature_cosine, r.gradient, u8::from(r.sampled), u8::from(r.selected)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// `√(d+1) − √d`, the shrink factor on the old neighbor terms when a node of
/// degree `d` gains one edge. In `(0, 1]`, equal to 1 only at `d = 0`.
pub fn alpha(d: usize) -> f64 {
    let d = d as f64;
    (d + 1.0).sqrt() - d.sqrt()
}

/// `1/√(d+1)`, the common factor of the embedding change.
pub fn degree_term(d: usize) -> f64 {
    1.0 / (d as f64 + 1.0).sqrt()
}

/// One instance of the single-edge decomposition for a one-layer linear GCN
/// `z = Ĥ X W`. Degrees count the self-loop, as `Ĥ` does: with `D` the
/// self-loop degree of `i`, adding edge `(i, k)` gives
///
/// `z_i − z_i^atk = degree_term(D) · (Σ_{j∈N(i)} alpha(D) (XW)_j / (√D √D_j)
///                   + (XW)_i / (D √(D+1)) − (XW)_k / √(D_k + 1))`.
///
/// The self term has its own coefficient because `i`'s own normalization
/// moves from `1/D` to `1/(D+1)`; `self_term_gap` is how far the shared
/// `alpha` coefficient would be from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub i: usize,
    pub k: usize,
    /// Self-loop degree of `i` before the edge is added.
    pub degree: usize,
    pub alpha: f64,
    pub degree_term: f64,
    /// `z_i − z_i^atk` from re-encoding the attacked graph.
    pub direct: Vec<f64>,
    /// The same vector from the decomposition.
    pub closed_form: Vec<f64>,
    /// `‖feature difference term‖₂`.
    pub feature_difference_norm: f64,
    /// `max |direct − closed_form|`.
    pub residual: f64,
    /// `‖(alpha/(D √D) − 1/(D √(D+1))) (XW)_i‖∞`, the error a shared
    /// coefficient would make on the self term.
    pub self_term_gap: f64,
}

/// Linear-GCN parameters wrapping `w` (`F × d`). The projection head is
/// unused by [`embed`](crate::model::embed) and left zero-sized.
pub fn linear_gcn(w: DenseMat) -> ModelParams {
    let d = w.cols();
    ModelParams {
        encoder: EncoderParams {
            mode: EncoderMode::LinearGcn,
            w1: w,
            w2: None,
            slope: 0.0,
        },
        projection: ProjectionParams {
            w1: DenseMat::zeros(d, 0),
            b1: DenseMat::zeros(1, 0),
            w2: DenseMat::zeros(0, 0),
            b2: DenseMat::zeros(1, 0),
        },
    }
}

/// Compares the direct embedding change from adding `(i, k)` with the
/// decomposition, for identical clean views (so `e_i = 0`).
pub fn shift_decomposition_check(graph: &SparseGraph, w: &DenseMat, i: usize, k: usize) -> Result<DecompositionCheck> {
    let n = graph.n();
    if i >= n || k >= n || i == k {
        return Err(Error::invalid(format!("need distinct nodes below {n}, got {i} and {k}")));
    }
    let adj = &graph.adjacency;
    if adj.has_edge(i, k) {
        return Err(Error::invalid(format!("{k} is already a neighbor of {i}")));
    }
    let params = linear_gcn(w.clone());
    let before = crate::model::embed(&params, &View::clean(graph))?;
    let attacked = View::clean(&graph.with_adjacency(adj.with_flips(&[(i.min(k), i.max(k))]))?);
    let after = crate::model::embed(&params, &attacked)?;
    let direct: Vec<f64> = before.row(i).iter().zip(after.row(i)).map(|(a, b)| a - b).collect();

    let xw = graph.features.matmul(w);
    let deg = |v: usize| adj.degree(v) + 1;
    let big_d = deg(i);
    let df = big_d as f64;
    let a = alpha(big_d);
    let mut diff = vec![0.0; w.cols()];
    for &j in adj.neighbors(i) {
        let c = a / (df.sqrt() * (deg(j) as f64).sqrt());
        for (t, v) in diff.iter_mut().zip(xw.row(j)) {
            *t += c * v;
        }
    }
    let self_coef = 1.0 / (df * (df + 1.0).sqrt());
    let k_coef = 1.0 / (deg(k) as f64 + 1.0).sqrt();
    for ((t, vi), vk) in diff.iter_mut().zip(xw.row(i)).zip(xw.row(k)) {
        *t += self_coef * vi - k_coef * vk;
    }
    let dt = degree_term(big_d);
    let closed_form: Vec<f64> = diff.iter().map(|v| dt * v).collect();
    let residual = direct
        .iter()
        .zip(&closed_form)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gap_coef = a / (df * df.sqrt()) - self_coef;
    let self_term_gap = xw.row(i).iter().map(|v| (dt * gap_coef * v).abs()).fold(0.0, f64::max);
    Ok(DecompositionCheck {
        i,
        k,
        degree: big_d,
        alpha: a,
        degree_term: dt,
        feature_difference_norm: diff.iter().map(|v| v * v).sum::<f64>().sqrt(),
        direct,
        closed_form,
        residual,
        self_term_gap,
    })
}

/// Draws `count` random `(i, k)` non-edges and checks each.
pub fn shift_random_checks<R: Rng + ?Sized>(
    graph: &SparseGraph,
    w: &DenseMat,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DecompositionCheck>> {
    let n = graph.n();
    if graph.adjacency.num_edges() >= n * n.saturating_sub(1) / 2 {
        return Err(Error::invalid("a complete graph has no pair to connect"));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (i, k) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != k && !graph.adjacency.has_edge(i, k) {
            out.push(shift_decomposition_check(graph, w, i, k)?);
        }
    }
    Ok(out)
}

pub fn write_shift_residuals(checks: &[DecompositionCheck], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "i\tk\tdegree\talpha\tdegree_term\tfeature_difference_norm\tresidual\tself_term_gap").map_err(io)?;
    for c in checks {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.i, c.k, c.degree, c.alpha, c.degree_term, c.feature_difference_norm, c.residual, c.self_term_gap
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
