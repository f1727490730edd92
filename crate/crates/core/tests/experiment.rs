use std::fs;
use std::path::{Path, PathBuf};

use gcl_core::eval::EvalTask;
use gcl_core::experiment::{
    cmd_attack, cmd_diagnose, cmd_eval, cmd_train, AttackMethod, ExperimentSpec, Mode, EMBEDDINGS_FILE, SHIFT_FILE,
    PARAMS_FILE, REPORT_FILE, SCATTER_FILE,
};
use gcl_core::graph::{budget_count, load_graph_bundle, write_graph_bundle, EDGES_FILE};
use gcl_core::synthetic::ContextualSbm;
use gcl_core::training::TrainConfig;
use gcl_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SMALL_CONFIG: &str = "\
epochs = 4
hidden_dim = 16
output_dim = 8
projection_dim = 8
k = 5
";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let g = ContextualSbm::default().sample(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        write_graph_bundle(&g, dir.path().join("clean")).unwrap();
        fs::write(dir.path().join("small.conf"), SMALL_CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> TrainConfig {
        TrainConfig::from_file(self.path("small.conf")).unwrap()
    }

    fn spec(&self, out: &str, tasks: &[EvalTask]) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(self.path("clean"), self.path(out));
        spec.config = Some(self.path("small.conf"));
        spec.eval_tasks = tasks.to_vec();
        spec
    }

    fn attacked_spec(&self, out: &str, mode: Mode, attacked: &str, tasks: &[EvalTask]) -> ExperimentSpec {
        let mut spec = self.spec(out, tasks);
        spec.mode = mode;
        spec.attacked_bundle = Some(self.path(attacked));
        spec
    }
}

fn bytes(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn training_is_deterministic_to_the_byte() {
    let f = Fixture::new();
    cmd_train(&f.spec("a", &[])).unwrap();
    cmd_train(&f.spec("b", &[])).unwrap();
    assert_eq!(bytes(f.path("a").join(EMBEDDINGS_FILE)), bytes(f.path("b").join(EMBEDDINGS_FILE)));
    assert_eq!(bytes(f.path("a").join(PARAMS_FILE)), bytes(f.path("b").join(PARAMS_FILE)));

    let mut other = f.spec("c", &[]);
    other.seed_override = Some(99);
    cmd_train(&other).unwrap();
    assert_ne!(bytes(f.path("a").join(EMBEDDINGS_FILE)), bytes(f.path("c").join(EMBEDDINGS_FILE)));
}

#[test]
fn zero_ratio_attack_leaves_the_bundle_unchanged() {
    let f = Fixture::new();
    let s = cmd_attack(&f.path("clean"), AttackMethod::Random, 0.0, None, &f.config(), &f.path("zero")).unwrap();
    assert_eq!(s.flips, 0);
    assert_eq!(bytes(f.path("clean").join(EDGES_FILE)), bytes(f.path("zero").join(EDGES_FILE)));
}

#[test]
fn evasive_against_an_unattacked_copy_matches_clean() {
    let f = Fixture::new();
    cmd_attack(&f.path("clean"), AttackMethod::Random, 0.0, None, &f.config(), &f.path("zero")).unwrap();
    let tasks = [EvalTask::Classify, EvalTask::Ol];
    cmd_train(&f.spec("clean_run", &tasks)).unwrap();
    cmd_train(&f.attacked_spec("evasive_run", Mode::Evasive, "zero", &tasks)).unwrap();

    let clean = cmd_eval(&f.spec("clean_run", &tasks), &f.path("clean_run").join(EMBEDDINGS_FILE), None).unwrap();
    let evasive = cmd_eval(
        &f.attacked_spec("evasive_run", Mode::Evasive, "zero", &tasks),
        &f.path("evasive_run").join(EMBEDDINGS_FILE),
        None,
    )
    .unwrap();
    assert_eq!(clean, evasive);
    assert_eq!(
        bytes(f.path("clean_run").join(REPORT_FILE)),
        bytes(f.path("evasive_run").join(REPORT_FILE))
    );
}

#[test]
fn attacked_modes_need_an_attacked_bundle() {
    let f = Fixture::new();
    for mode in [Mode::Poisoning, Mode::Evasive] {
        let mut spec = f.spec("x", &[]);
        spec.mode = mode;
        assert!(matches!(cmd_train(&spec), Err(Error::Usage(_))));
    }
    let mut spec = f.spec("x", &[]);
    spec.attacked_bundle = Some(f.path("clean"));
    assert!(matches!(cmd_train(&spec), Err(Error::Usage(_))));
}

#[test]
fn random_attack_adds_the_budgeted_edge_count() {
    let f = Fixture::new();
    let before = load_graph_bundle(f.path("clean")).unwrap();
    let e = before.adjacency.num_edges();
    let s = cmd_attack(&f.path("clean"), AttackMethod::Random, 0.25, None, &f.config(), &f.path("att")).unwrap();
    let after = load_graph_bundle(f.path("att")).unwrap();
    assert_eq!(s.flips, budget_count(0.25, e));
    assert_eq!(after.adjacency.num_edges(), e + budget_count(0.25, e));
    assert!(before.adjacency.edges().all(|(i, j)| after.adjacency.has_edge(i, j)));
    assert_eq!(after.features, before.features);
    assert_eq!(after.labels, before.labels);

    // The attacked bundle feeds straight into poisoning training.
    let tasks = [EvalTask::Classify];
    let outcome = cmd_train(&f.attacked_spec("poison", Mode::Poisoning, "att", &tasks)).unwrap();
    assert_eq!(outcome.embeddings.rows(), before.n());
    let report = cmd_eval(
        &f.attacked_spec("poison", Mode::Poisoning, "att", &tasks),
        &f.path("poison").join(EMBEDDINGS_FILE),
        None,
    )
    .unwrap();
    assert!(report.accuracy.is_some());
}

#[test]
fn edges_only_attacked_bundle_is_accepted() {
    let f = Fixture::new();
    cmd_attack(&f.path("clean"), AttackMethod::Random, 0.1, None, &f.config(), &f.path("att")).unwrap();
    fs::create_dir(f.path("edges_only")).unwrap();
    fs::copy(f.path("att").join(EDGES_FILE), f.path("edges_only").join(EDGES_FILE)).unwrap();
    let full = cmd_train(&f.attacked_spec("full", Mode::Poisoning, "att", &[])).unwrap();
    let thin = cmd_train(&f.attacked_spec("thin", Mode::Poisoning, "edges_only", &[])).unwrap();
    assert_eq!(full.embeddings, thin.embeddings);
}

#[test]
fn gradient_attack_uses_a_trained_model() {
    let f = Fixture::new();
    let config = f.config();
    assert!(matches!(
        cmd_attack(&f.path("clean"), AttackMethod::Gradient, 0.1, None, &config, &f.path("g")),
        Err(Error::Usage(_))
    ));
    cmd_train(&f.spec("model", &[])).unwrap();
    let model = f.path("model").join(PARAMS_FILE);
    let s = cmd_attack(&f.path("clean"), AttackMethod::Gradient, 0.1, Some(&model), &config, &f.path("g")).unwrap();
    assert!(s.flips <= budget_count(0.1, s.edges_before));
    assert!(s.flips > 0);
    load_graph_bundle(f.path("g")).unwrap();
}

#[test]
fn report_fields_follow_the_task_set() {
    let f = Fixture::new();
    cmd_train(&f.spec("run", &[])).unwrap();
    let z = f.path("run").join(EMBEDDINGS_FILE);

    let empty = cmd_eval(&f.spec("run", &[]), &z, None).unwrap();
    assert!(empty.accuracy.is_none() && empty.auc.is_none() && empty.nmi.is_none());
    assert!(empty.ol.is_empty() && empty.degree_buckets.is_none());
    assert_eq!(empty.meta.nodes, 120);

    let ol = cmd_eval(&f.spec("run", &[EvalTask::Ol]), &z, None).unwrap();
    assert_eq!(ol.ol.keys().copied().collect::<Vec<_>>(), vec![10]);
    let written: serde_json::Value = serde_json::from_slice(&bytes(f.path("run").join(REPORT_FILE))).unwrap();
    assert!(written["ol"]["10"].is_f64());
}

#[test]
fn link_task_trains_a_holdout_model() {
    let f = Fixture::new();
    let spec = f.spec("link", &[EvalTask::Link]);
    let outcome = cmd_train(&spec).unwrap();
    assert!(outcome.link_embeddings.is_some());
    let report = cmd_eval(&spec, &f.path("link").join(EMBEDDINGS_FILE), None).unwrap();
    assert_eq!(report.meta.link_holdout_trained, Some(true));
    assert!((0.0..=1.0).contains(&report.auc.unwrap()));
}

#[test]
fn eval_rejects_mismatched_embeddings() {
    let f = Fixture::new();
    let bad = f.path("bad.tsv");
    fs::write(&bad, "1\t2\n3\t4\n").unwrap();
    assert!(cmd_eval(&f.spec("x", &[]), &bad, None).is_err());
}

#[test]
fn diagnose_writes_scatter_and_residuals() {
    let f = Fixture::new();
    let s = cmd_diagnose(&f.path("clean"), None, &f.config(), 100, 5, &f.path("diag")).unwrap();
    assert_eq!(s.shift_instances, 5);
    assert!(s.shift_max_residual < 1e-10);
    assert_eq!(s.scatter.sampled, 100);
    let scatter = fs::read_to_string(f.path("diag").join(SCATTER_FILE)).unwrap();
    assert!(scatter.lines().count() > 100);
    let shift = fs::read_to_string(f.path("diag").join(SHIFT_FILE)).unwrap();
    assert_eq!(shift.lines().count(), 6);
}
