//! Downstream evaluation of frozen embeddings: linear-probe classification
//! (overall and by degree), link prediction AUC, k-means NMI, and the kNN
//! overlap between embedding space and feature space.

mod cluster;
mod link;
mod probe;

pub use cluster::{inertia_of, kmeans, kmeans_nmi, nmi, Clustering, DEFAULT_RESTARTS};
pub use link::{auc, cosine, LinkSplit, DEFAULT_HOLDOUT};
pub use probe::{
    degree_bucket_accuracy, degree_buckets, fit_logistic, linear_probe, BucketAccuracy, LogisticModel,
    MeanStd, ProbeOutcome, ProbeRun, L2_GRID,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::graph::{knn_select, random_split, Adjacency, SparseGraph};
use crate::rng;

/// Fraction of the directed `k`-NN selections of `x` that `z`'s `k`-NN
/// selections also make. Both use the same cosine top-`k` rule.
pub fn ol_score(z: &DenseMat, x: &DenseMat, k: usize) -> Result<f64> {
    if z.rows() != x.rows() {
        return Err(Error::Shape(format!("{} embeddings for {} feature rows", z.rows(), x.rows())));
    }
    let sz = knn_select(z, k)?;
    let sx = knn_select(x, k)?;
    Ok(sz.overlap(&sx) as f64 / (x.rows() * k) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Classify,
    Link,
    Cluster,
    Ol,
    Degree,
}

impl EvalTask {
    pub const ALL: [EvalTask; 5] = [
        EvalTask::Classify,
        EvalTask::Link,
        EvalTask::Cluster,
        EvalTask::Ol,
        EvalTask::Degree,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        EvalTask::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalTask::Classify => "classify",
            EvalTask::Link => "link",
            EvalTask::Cluster => "cluster",
            EvalTask::Ol => "ol",
            EvalTask::Degree => "degree",
        }
    }

    /// Parses a comma-separated list; the empty string is the empty set.
    pub fn parse_list(s: &str) -> Result<Vec<EvalTask>> {
        let mut out: Vec<EvalTask> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| EvalTask::parse(t).ok_or_else(|| Error::invalid(format!("unknown eval task `{t}`"))))
            .collect::<Result<_>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub probe_seeds: usize,
    pub degree_thresholds: Vec<usize>,
    pub holdout: f64,
    pub ol_ks: Vec<usize>,
    pub cluster_restarts: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            probe_seeds: 5,
            degree_thresholds: vec![2],
            holdout: DEFAULT_HOLDOUT,
            ol_ks: vec![10],
            cluster_restarts: DEFAULT_RESTARTS,
        }
    }
}

impl EvalOptions {
    /// The link-prediction split this seed implies for `graph`.
    pub fn link_split(&self, graph: &SparseGraph) -> Result<LinkSplit> {
        LinkSplit::new(&graph.adjacency, self.holdout, &mut rng::stream(self.seed, "link", 0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub nodes: usize,
    pub dim: usize,
    pub seed: u64,
    pub tasks: Vec<EvalTask>,
    /// Whether the bundle's split was used (otherwise a seeded random one).
    pub bundle_split: Option<bool>,
    /// Whether link scores came from embeddings learned without the
    /// held-out edges.
    pub link_holdout_trained: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub accuracy: Option<MeanStd>,
    pub auc: Option<f64>,
    pub nmi: Option<f64>,
    /// OL score keyed by `k`.
    pub ol: BTreeMap<usize, f64>,
    pub degree_buckets: Option<Vec<BucketAccuracy>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Runs `tasks` on embeddings `z` of `graph`. Degree buckets use
/// `clean_adjacency`, the unattacked structure. `link_z`, when given, are
/// embeddings learned on [`EvalOptions::link_split`]'s training adjacency
/// and are used for link scoring instead of `z`.
pub fn evaluate(
    z: &DenseMat,
    graph: &SparseGraph,
    clean_adjacency: &Adjacency,
    link_z: Option<&DenseMat>,
    tasks: &[EvalTask],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if z.rows() != graph.n() || clean_adjacency.n() != graph.n() {
        return Err(Error::Shape(format!("{} embedding rows for a {}-node graph", z.rows(), graph.n())));
    }
    let wants = |t: EvalTask| tasks.contains(&t);
    let labels = || {
        graph
            .labels
            .as_deref()
            .ok_or_else(|| Error::invalid("the bundle has no labels.tsv, which classify/cluster/degree need"))
    };
    let mut report = EvalReport {
        meta: EvalMeta {
            nodes: z.rows(),
            dim: z.cols(),
            seed: options.seed,
            tasks: tasks.to_vec(),
            bundle_split: None,
            link_holdout_trained: None,
        },
        accuracy: None,
        auc: None,
        nmi: None,
        ol: BTreeMap::new(),
        degree_buckets: None,
    };

    if wants(EvalTask::Classify) || wants(EvalTask::Degree) {
        let labels = labels()?;
        let split = match &graph.split {
            Some(s) => s.clone(),
            None => random_split(graph.n(), &mut rng::stream(options.seed, "split", 0)),
        };
        report.meta.bundle_split = Some(graph.split.is_some());
        let seeds: Vec<u64> = (0..options.probe_seeds as u64)
            .map(|s| options.seed.wrapping_add(s))
            .collect();
        let probe = linear_probe(z, labels, &split, &seeds)?;
        if wants(EvalTask::Degree) {
            report.degree_buckets = Some(degree_bucket_accuracy(
                &probe,
                labels,
                clean_adjacency,
                &options.degree_thresholds,
            )?);
        }
        if wants(EvalTask::Classify) {
            report.accuracy = Some(probe.accuracy);
        }
    }
    if wants(EvalTask::Link) {
        let split = options.link_split(graph)?;
        report.auc = Some(split.auc(link_z.unwrap_or(z))?);
        report.meta.link_holdout_trained = Some(link_z.is_some());
    }
    if wants(EvalTask::Cluster) {
        let labels = labels()?;
        let k = graph.num_classes();
        let mut r = rng::stream(options.seed, "cluster", 0);
        report.nmi = Some(kmeans_nmi(z, labels, k, options.cluster_restarts, &mut r)?);
    }
    if wants(EvalTask::Ol) {
        for &k in &options.ol_ks {
            report.ol.insert(k, ol_score(z, &graph.features, k)?);
        }
    }
    Ok(report)
}
