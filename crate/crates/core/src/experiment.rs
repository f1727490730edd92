//! Experiment plumbing behind the command-line tool: clean, poisoning and
//! evasive protocols over graph bundles, attack export, evaluation and
//! diagnostics, each writing its artifacts to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{compute_gradients, select_edge_flips};
use crate::contrastive::LossTerms;
use crate::dense::DenseMat;
use crate::diagnostics::{
    shift_random_checks, gradient_scatter, write_shift_residuals, write_scatter, ScatterSummary,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport, EvalTask};
use crate::graph::{
    budget_count, load_attacked_bundle, load_graph_bundle, random_attack, write_graph_bundle, SparseGraph, View,
};
use crate::model::{embed, ModelParams};
use crate::rng;
use crate::training::{export_embeddings, read_embeddings, train, TrainConfig};

pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const LINK_EMBEDDINGS_FILE: &str = "embeddings_link.tsv";
pub const PARAMS_FILE: &str = "params.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const REPORT_FILE: &str = "report.json";
pub const SCATTER_FILE: &str = "scatter.tsv";
pub const SHIFT_FILE: &str = "shift_residuals.tsv";
pub const DIAGNOSE_SUMMARY_FILE: &str = "diagnose_summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Train and evaluate on the clean graph.
    Clean,
    /// Train and evaluate on the attacked graph.
    Poisoning,
    /// Train on the clean graph, evaluate on the attacked one.
    Evasive,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(Mode::Clean),
            "poisoning" => Some(Mode::Poisoning),
            "evasive" => Some(Mode::Evasive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Clean => "clean",
            Mode::Poisoning => "poisoning",
            Mode::Evasive => "evasive",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub clean_bundle: PathBuf,
    pub attacked_bundle: Option<PathBuf>,
    pub mode: Mode,
    /// Config file; defaults apply when absent.
    pub config: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub eval_tasks: Vec<EvalTask>,
    pub seed_override: Option<u64>,
}

/// The clean graph and, for attacked modes, its attacked counterpart.
pub struct Graphs {
    pub clean: SparseGraph,
    pub attacked: Option<SparseGraph>,
}

impl ExperimentSpec {
    pub fn new(clean_bundle: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            clean_bundle: clean_bundle.into(),
            attacked_bundle: None,
            mode: Mode::Clean,
            config: None,
            output_dir: output_dir.into(),
            eval_tasks: Vec::new(),
            seed_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.attacked_bundle) {
            (Mode::Poisoning | Mode::Evasive, None) => Err(Error::Usage(format!(
                "mode `{}` needs --attacked-bundle",
                self.mode.as_str()
            ))),
            (Mode::Clean, Some(_)) => Err(Error::Usage(
                "mode `clean` takes no --attacked-bundle".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn load_config(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed_override {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load_graphs(&self) -> Result<Graphs> {
        self.validate()?;
        let clean = load_graph_bundle(&self.clean_bundle)?;
        let attacked = self
            .attacked_bundle
            .as_ref()
            .map(|dir| load_attacked_bundle(&clean, dir))
            .transpose()?;
        Ok(Graphs { clean, attacked })
    }
}

impl Graphs {
    /// Poisoning trains on the attacked graph, everything else on the clean.
    pub fn training_graph(&self, mode: Mode) -> &SparseGraph {
        match (mode, &self.attacked) {
            (Mode::Poisoning, Some(a)) => a,
            _ => &self.clean,
        }
    }

    /// Attacked modes evaluate on the attacked graph.
    pub fn eval_graph(&self, mode: Mode) -> &SparseGraph {
        match (mode, &self.attacked) {
            (Mode::Poisoning | Mode::Evasive, Some(a)) => a,
            _ => &self.clean,
        }
    }
}

/// Evaluation settings derived from the experiment seed.
pub fn eval_options(seed: u64) -> EvalOptions {
    EvalOptions {
        seed: rng::stream(seed, "eval", 0).random(),
        ..EvalOptions::default()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let params: ModelParams = serde_json::from_str(&text)?;
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters in {}", path.display())));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub epochs: usize,
    pub wall_time_secs: f64,
    pub trace: Vec<LossTerms>,
}

/// Result of [`cmd_train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub summary: TrainSummary,
    /// Embeddings of the evaluation graph.
    pub embeddings: DenseMat,
    /// Embeddings from a model trained without the held-out link edges.
    pub link_embeddings: Option<DenseMat>,
}

/// Trains per the experiment's mode and exports embeddings of the evaluation
/// graph. When link prediction is among the tasks, a second model is
/// trained with the held-out edges removed and its embeddings exported too.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<TrainOutcome> {
    let config = spec.load_config()?;
    let graphs = spec.load_graphs()?;
    let train_graph = graphs.training_graph(spec.mode);
    let eval_graph = graphs.eval_graph(spec.mode);

    let report = train(train_graph, &config)?;
    let embeddings = if spec.mode == Mode::Evasive {
        embed(&report.params, &View::clean(eval_graph))?
    } else {
        report.embeddings.clone()
    };

    let link_embeddings = if spec.eval_tasks.contains(&EvalTask::Link) {
        let split = eval_options(config.seed).link_split(eval_graph)?;
        let held = |g: &SparseGraph| {
            let kept = g
                .adjacency
                .edges()
                .filter(|e| split.positives.binary_search(e).is_err());
            g.with_adjacency(crate::graph::Adjacency::from_edges(g.n(), kept)?)
        };
        let link_report = train(&held(train_graph)?, &config)?;
        Some(embed(&link_report.params, &View::clean(&held(eval_graph)?))?)
    } else {
        None
    };

    let out = &spec.output_dir;
    create_dir(out)?;
    export_embeddings(&embeddings, out.join(EMBEDDINGS_FILE))?;
    if let Some(z) = &link_embeddings {
        export_embeddings(z, out.join(LINK_EMBEDDINGS_FILE))?;
    }
    write_json(&report.params, &out.join(PARAMS_FILE))?;
    let summary = TrainSummary {
        mode: spec.mode,
        epochs: config.epochs,
        wall_time_secs: report.wall_time_secs,
        trace: report.trace,
    };
    write_json(&summary, &out.join(TRAIN_REPORT_FILE))?;
    Ok(TrainOutcome {
        params: report.params,
        summary,
        embeddings,
        link_embeddings,
    })
}

/// Evaluates exported embeddings on the experiment's evaluation graph and writes
/// `report.json`. Link prediction reads `link_embeddings`, falling back to
/// `embeddings_link.tsv` beside `embeddings` and then to `embeddings` itself.
pub fn cmd_eval(spec: &ExperimentSpec, embeddings: &Path, link_embeddings: Option<&Path>) -> Result<EvalReport> {
    let config = spec.load_config()?;
    let graphs = spec.load_graphs()?;
    let graph = graphs.eval_graph(spec.mode);
    let z = read_embeddings(embeddings)?;
    if z.rows() != graph.n() {
        return Err(Error::Shape(format!(
            "{} has {} rows but the graph has {} nodes",
            embeddings.display(),
            z.rows(),
            graph.n()
        )));
    }
    let link_z = if spec.eval_tasks.contains(&EvalTask::Link) {
        let sibling = embeddings.with_file_name(LINK_EMBEDDINGS_FILE);
        match link_embeddings {
            Some(p) => Some(read_embeddings(p)?),
            None if sibling.exists() => Some(read_embeddings(&sibling)?),
            None => None,
        }
    } else {
        None
    };
    let report = evaluate(
        &z,
        graph,
        &graphs.clean.adjacency,
        link_z.as_ref(),
        &spec.eval_tasks,
        &eval_options(config.seed),
    )?;
    create_dir(&spec.output_dir)?;
    report.write(spec.output_dir.join(REPORT_FILE))?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    /// Uniformly random edge additions.
    Random,
    /// Gradient-ranked flips under a trained model.
    Gradient,
}

impl AttackMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(AttackMethod::Random),
            "gradient" => Some(AttackMethod::Gradient),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub method: AttackMethod,
    pub ratio: f64,
    pub edges_before: usize,
    pub edges_after: usize,
    /// Pairs whose edge status changed.
    pub flips: usize,
}

/// Writes an attacked copy of `bundle` to `out`. The gradient method scores
/// flips with `model` on two clean views; it flips `⌈ratio · |E|⌉` pairs
/// unless fewer have a loss-increasing gradient.
pub fn cmd_attack(
    bundle: &Path,
    method: AttackMethod,
    ratio: f64,
    model: Option<&Path>,
    config: &TrainConfig,
    out: &Path,
) -> Result<AttackSummary> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("attack ratio must be >= 0, got {ratio}")));
    }
    let graph = load_graph_bundle(bundle)?;
    let adjacency = match method {
        AttackMethod::Random => {
            random_attack(&graph, ratio, &mut rng::stream(config.seed, "attack", 0))?.adjacency
        }
        AttackMethod::Gradient => {
            let path = model.ok_or_else(|| Error::Usage("the gradient attack needs --model".into()))?;
            let params = read_params(path)?;
            let clean = View::clean(&graph);
            let grads = compute_gradients(&params, &clean, &clean, config.tau, config.dense_attack_limit)?;
            let count = budget_count(ratio, graph.adjacency.num_edges());
            graph.adjacency.with_flips(&select_edge_flips(&grads.g_a, &graph.adjacency, count))
        }
    };
    let flips = graph
        .adjacency
        .edges()
        .filter(|&(i, j)| !adjacency.has_edge(i, j))
        .count()
        + adjacency.edges().filter(|&(i, j)| !graph.adjacency.has_edge(i, j)).count();
    let summary = AttackSummary {
        method,
        ratio,
        edges_before: graph.adjacency.num_edges(),
        edges_after: adjacency.num_edges(),
        flips,
    };
    write_graph_bundle(&graph.with_adjacency(adjacency)?, out)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub scatter: ScatterSummary,
    pub shift_instances: usize,
    pub shift_max_residual: f64,
}

/// Writes `scatter.tsv`, `shift_residuals.tsv` and a JSON summary. Without a
/// model file a model is trained on the bundle first. The decomposition
/// instances use the model's first-layer weights as a linear GCN.
pub fn cmd_diagnose(
    bundle: &Path,
    model: Option<&Path>,
    config: &TrainConfig,
    sample_size: usize,
    shift_instances: usize,
    out: &Path,
) -> Result<DiagnoseSummary> {
    let graph = load_graph_bundle(bundle)?;
    let params = match model {
        Some(p) => read_params(p)?,
        None => train(&graph, config)?.params,
    };
    let records = gradient_scatter(&graph, &params, config, sample_size, &mut rng::stream(config.seed, "diagnose", 0))?;
    let checks = shift_random_checks(
        &graph,
        &params.encoder.w1,
        shift_instances,
        &mut rng::stream(config.seed, "diagnose", 1),
    )?;
    create_dir(out)?;
    write_scatter(&records, out.join(SCATTER_FILE))?;
    write_shift_residuals(&checks, out.join(SHIFT_FILE))?;
    let summary = DiagnoseSummary {
        scatter: ScatterSummary::from_records(&records),
        shift_instances: checks.len(),
        shift_max_residual: checks.iter().map(|c| c.residual).fold(0.0, f64::max),
    };
    write_json(&summary, &out.join(DIAGNOSE_SUMMARY_FILE))?;
    Ok(summary)
}
