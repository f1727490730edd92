//! `gcl`: train, attack, evaluate and diagnose graph contrastive models on
//! TSV graph bundles.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 on any other
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcl_core::eval::EvalTask;
use gcl_core::experiment::{
    cmd_attack, cmd_diagnose, cmd_eval, cmd_train, AttackMethod, ExperimentSpec, Mode, EMBEDDINGS_FILE,
};
use gcl_core::training::TrainConfig;
use gcl_core::Error;

#[derive(Parser)]
#[command(name = "gcl", version, about = "Adversarial graph contrastive learning with a similarity-preserving view")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and export embeddings of the evaluation graph.
    Train(ExperimentArgs),
    /// Write an attacked copy of a bundle.
    Attack(AttackArgs),
    /// Evaluate exported embeddings and write report.json.
    Eval(EvalArgs),
    /// Write the gradient scatter and decomposition residuals.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Clean graph bundle directory.
    #[arg(long)]
    bundle: PathBuf,
    /// Attacked bundle (full bundle, or a directory holding only edges.tsv).
    #[arg(long)]
    attacked_bundle: Option<PathBuf>,
    #[arg(long, default_value = "clean", value_parser = parse_mode)]
    mode: Mode,
    /// `key = value` config file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of classify,link,cluster,ol,degree.
    #[arg(long, default_value = "", value_parser = parse_tasks)]
    tasks: Tasks,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: AttackMethod,
    /// Budget as a fraction of the edge count.
    #[arg(long)]
    ratio: f64,
    /// params.json of a trained model (gradient method).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Embeddings to evaluate; defaults to <out>/embeddings.tsv.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Embeddings from a model trained without the held-out link edges.
    #[arg(long)]
    link_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// params.json of a trained model; trains one when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Uniformly sampled node pairs in scatter.tsv.
    #[arg(long, default_value_t = 5000)]
    sample_size: usize,
    /// Random instances in shift_residuals.tsv.
    #[arg(long, default_value_t = 20)]
    shift_instances: usize,
    #[arg(long)]
    seed_override: Option<u64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("expected clean, poisoning or evasive, got `{s}`"))
}

fn parse_method(s: &str) -> Result<AttackMethod, String> {
    AttackMethod::parse(s).ok_or_else(|| format!("expected random or gradient, got `{s}`"))
}

#[derive(Clone)]
struct Tasks(Vec<EvalTask>);

fn parse_tasks(s: &str) -> Result<Tasks, String> {
    EvalTask::parse_list(s).map(Tasks).map_err(|e| e.to_string())
}

impl ExperimentArgs {
    fn spec(self) -> ExperimentSpec {
        ExperimentSpec {
            clean_bundle: self.bundle,
            attacked_bundle: self.attacked_bundle,
            mode: self.mode,
            config: self.config,
            output_dir: self.out,
            eval_tasks: self.tasks.0,
            seed_override: self.seed_override,
        }
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<TrainConfig, Error> {
    let mut spec = ExperimentSpec::new("", "");
    spec.config = path.cloned();
    spec.seed_override = seed;
    spec.load_config()
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train(args) => {
            let spec = args.spec();
            let outcome = cmd_train(&spec)?;
            let last = outcome.summary.trace.last();
            println!(
                "trained {} epochs in {:.1}s, final loss {}",
                outcome.summary.epochs,
                outcome.summary.wall_time_secs,
                last.map_or("n/a".to_string(), |t| format!("{:.6}", t.total))
            );
            println!("wrote {}", spec.output_dir.join(EMBEDDINGS_FILE).display());
        }
        Command::Attack(args) => {
            let config = load_config(args.config.as_ref(), args.seed_override)?;
            let summary = cmd_attack(&args.bundle, args.method, args.ratio, args.model.as_deref(), &config, &args.out)?;
            println!("{}", json(&summary)?);
        }
        Command::Eval(args) => {
            let embeddings = args
                .embeddings
                .unwrap_or_else(|| args.experiment.out.join(EMBEDDINGS_FILE));
            let spec = args.experiment.spec();
            let report = cmd_eval(&spec, &embeddings, args.link_embeddings.as_deref())?;
            println!("{}", report.to_json()?);
        }
        Command::Diagnose(args) => {
            let config = load_config(args.config.as_ref(), args.seed_override)?;
            let summary = cmd_diagnose(
                &args.bundle,
                args.model.as_deref(),
                &config,
                args.sample_size,
                args.shift_instances,
                &args.out,
            )?;
            println!("{}", json(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
