//! The training loop and embedding persistence.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{SubgraphSize, TrainConfig, AUTO_SUBGRAPH_SIZE};

use crate::adversarial::generate_adversarial_view;
use crate::autodiff::Tape;
use crate::contrastive::{cross_view_loss, LossTerms};
use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::graph::{knn_select, knn_view, sample_subgraph, stochastic_augment, Adjacency, Provenance, SparseGraph, View};
use crate::model::{embed, encode, init_params, AdamConfig, AdamState, GraphInput, ModelParams};
use crate::rng::stream;

/// Outcome of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss terms of every epoch, in order.
    pub trace: Vec<LossTerms>,
    pub wall_time_secs: f64,
    pub params: ModelParams,
    /// Encoder output on the un-augmented training graph.
    pub embeddings: DenseMat,
}

/// The four views of one epoch.
#[derive(Clone, Debug)]
pub struct EpochViews {
    pub view1: View,
    pub view2: View,
    pub adversarial: Option<View>,
    pub similarity: Option<View>,
}

/// Restricts a full-graph kNN adjacency to a sampled subgraph (keeps the
/// edges whose endpoints were both sampled) and pairs it with the
/// subgraph's features.
fn restricted_knn(full: &Adjacency, sub: &View, nodes: &[usize]) -> View {
    View::new(full.induced(nodes), sub.features.clone(), Provenance::Knn)
}

/// Trains a model on `graph`.
pub fn train(graph: &SparseGraph, config: &TrainConfig) -> Result<TrainReport> {
    train_observed(graph, config, |_, _| {})
}

/// [`train`], calling `observe(epoch, terms)` after every update.
pub fn train_observed(
    graph: &SparseGraph,
    config: &TrainConfig,
    mut observe: impl FnMut(usize, &LossTerms),
) -> Result<TrainReport> {
    config.validate()?;
    let n = graph.n();
    if n < 2 {
        return Err(Error::invalid("training needs at least two nodes"));
    }
    let start = Instant::now();
    let mut params = init_params(
        config.encoder,
        graph.num_features(),
        config.hidden_dim,
        config.output_dim,
        config.projection_dim,
        &mut stream(config.seed, "init", 0),
    )?;
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut adam = AdamState::new(AdamConfig::new(config.lr, config.weight_decay), &sizes);

    let use_sp = config.lambda2 > 0.0;
    let full_knn = if use_sp && !config.knn_recompute {
        Some(knn_select(&graph.features, config.k)?.to_adjacency())
    } else {
        None
    };
    let m = config.subgraph_size.resolve(n);
    let clean = View::clean(graph);

    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let (base, nodes) = if m < n {
            let s = sample_subgraph(graph, m, &mut stream(config.seed, "subgraph", e))?;
            (s.view, s.nodes)
        } else {
            (clean.clone(), (0..n).collect())
        };
        let views = epoch_views(&params, config, &base, &nodes, full_knn.as_ref(), e)?;

        let mut tape = Tape::new();
        let vars = params.record(&mut tape, true);
        let z = |v: &View, tape: &mut Tape| encode(&params, &vars, &GraphInput::sparse(v), tape);
        let z1 = z(&views.view1, &mut tape)?;
        let z2 = z(&views.view2, &mut tape)?;
        let z_adv = views.adversarial.as_ref().map(|v| z(v, &mut tape)).transpose()?;
        let z_sp = views.similarity.as_ref().map(|v| z(v, &mut tape)).transpose()?;
        let loss = cross_view_loss(z1, z2, z_adv, z_sp, &vars, config.weights(), &mut tape)?;
        let terms = loss.values(&tape);
        if !terms.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let grads = tape.backward(loss.total)?;
        let grads = vars.gradients(&grads, &params);
        drop(tape);
        adam.step(&mut params.blocks_mut(), &grads.blocks())
            .map_err(|_| Error::Diverged { epoch })?;
        observe(epoch, &terms);
        trace.push(terms);
    }

    let embeddings = embed(&params, &clean)?;
    Ok(TrainReport {
        trace,
        wall_time_secs: start.elapsed().as_secs_f64(),
        params,
        embeddings,
    })
}

/// Builds the views of epoch `epoch` from the (sub)graph `base`, whose node
/// `a` is node `nodes[a]` of the full graph.
pub fn epoch_views(
    params: &ModelParams,
    config: &TrainConfig,
    base: &View,
    nodes: &[usize],
    full_knn: Option<&Adjacency>,
    epoch: u64,
) -> Result<EpochViews> {
    let view1 = stochastic_augment(base, config.p_e1, config.p_f1, &mut stream(config.seed, "view1", epoch))?;
    let view2 = stochastic_augment(base, config.p_e2, config.p_f2, &mut stream(config.seed, "view2", epoch))?;
    let adversarial = if config.lambda1 > 0.0 {
        Some(generate_adversarial_view(
            params,
            &view1,
            &view2,
            config.tau,
            &config.budget(),
            config.feature_perturb,
            config.dense_attack_limit,
        )?)
    } else {
        None
    };
    let similarity = if config.lambda2 > 0.0 {
        Some(match full_knn {
            Some(full) => restricted_knn(full, base, nodes),
            None => knn_view(&base.features, config.k.min(base.n().saturating_sub(1)).max(1))?,
        })
    } else {
        None
    };
    Ok(EpochViews {
        view1,
        view2,
        adversarial,
        similarity,
    })
}

/// Writes one line per node: its id, then its embedding entries, tab
/// separated. Values use the shortest representation that reads back to
/// the same float.
pub fn export_embeddings(z: &DenseMat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..z.rows() {
        let mut line = i.to_string();
        for v in z.row(i) {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_embeddings`].
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<DenseMat> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err(k + 1, "missing node id".into()))?;
        if id != rows.len() {
            return Err(parse_err(k + 1, format!("expected node {}, found {id}", rows.len())));
        }
        let row = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(k + 1, format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(k + 1, format!("expected {} values, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no embeddings".into()));
    }
    DenseMat::from_rows(&rows)
}
