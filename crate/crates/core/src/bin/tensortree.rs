use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tensortree::bench::{run_experiment, run_trial, trial_seed, ExperimentSpec, FunctionId, TreeFamily};
use tensortree::network::TreeTensorNetwork;
use tensortree::tree::format_subset;
use tensortree::{Error, Result};

#[derive(Parser)]
#[command(name = "tensortree", version, about = "Learning with adaptive tree tensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model as described by a JSON config and save it.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a multi-trial experiment on a benchmark function.
    Bench {
        #[arg(long)]
        function: FunctionId,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value = "balanced")]
        tree: TreeFamily,
        #[arg(long, default_value_t = 10_000)]
        n_test: usize,
        /// Polynomial degree; defaults to the function's usual degree.
        #[arg(long)]
        degree: Option<usize>,
        /// Keep the starting tree fixed.
        #[arg(long)]
        no_tree_adaptation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the tree, ranks and storage complexity of a saved model.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct FitConfig {
    #[serde(flatten)]
    spec: ExperimentSpec,
    model: PathBuf,
    #[serde(default)]
    report: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn fit(config: &Path) -> Result<()> {
    let cfg: FitConfig = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    cfg.spec.validate()?;
    let (report, net) = run_trial(&cfg.spec, trial_seed(cfg.spec.seed, 0))?;
    net.save(&cfg.model)?;
    if let Some(path) = &cfg.report {
        write_json(path, &report)?;
    }
    println!(
        "test error {:.3e}, cv error {:.3e}, storage {}",
        report.test_error, report.cv_error, report.storage
    );
    Ok(())
}

fn inspect(model: &Path) -> Result<()> {
    let net = TreeTensorNetwork::load(model)?;
    let tree = net.tree();
    let ranks = net.ranks();
    println!("dimension {}", net.dim());
    for id in tree.canonical_order() {
        let kind = if tree.is_leaf(id) { "leaf" } else { "node" };
        println!("{kind} {} rank {}", format_subset(tree.subset(id)), ranks[id]);
    }
    println!("storage complexity {}", net.storage_complexity());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config } => fit(&config),
        Command::Bench { function, n, trials, seed, noise, tree, n_test, degree, no_tree_adaptation, out } => {
            let mut spec = ExperimentSpec::new(function, n, trials, seed);
            spec.noise = noise;
            spec.tree = tree;
            spec.n_test = n_test;
            spec.degree = degree;
            spec.adapt.tree_adaptation = !no_tree_adaptation;
            let report = run_experiment(&spec)?;
            write_json(&out, &report)?;
            println!(
                "test error [{:.3e}, {:.3e}], storage [{}, {}]",
                report.test_error.min, report.test_error.max, report.storage.min, report.storage.max
            );
            if let Some(f) = report.optimal_tree_frequency {
                println!("optimal tree frequency {f:.2}");
            }
            Ok(())
        }
        Command::Inspect { model } => inspect(&model),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(3),
                Error::Json(_) | Error::Parse(_) => ExitCode::from(4),
                _ => ExitCode::from(1),
            }
        }
    }
}
