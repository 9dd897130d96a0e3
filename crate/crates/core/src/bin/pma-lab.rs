use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pma_lab::experiment::{
    build_report, evaluate_run, pretrain, write_csv, EvalRequest, ExperimentConfig, Method, Planner,
};
use pma_lab::math::mean_ci95;
use pma_lab::tabular::{sweep, SweepConfig};
use pma_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "pma-lab", version, about = "Unsupervised pretraining and zero-shot planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a default experiment config as JSON.
    DefaultConfig {
        #[arg(long, default_value = "two_zone")]
        env: String,
        #[arg(long, default_value = "pma")]
        method: String,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// Use the small single-core preset.
        #[arg(long)]
        desk: bool,
    },
    /// Run the unsupervised phase for every configured seed.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Override the seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Zero-shot evaluation of finished runs.
    Evaluate {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "mppi")]
        planner: String,
        #[arg(long)]
        task: String,
        /// Penalty coefficients; defaults to the run config's sweep.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        /// Episode seeds; defaults to the run config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Aggregate evaluations of several runs into a CSV table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the performance bounds on random tabular problems.
    TabularVerify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 5)]
        max_states: usize,
        #[arg(long, default_value_t = 3)]
        max_actions: usize,
        #[arg(long, default_value_t = 2)]
        latents: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-instance slack rows as JSONL.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DefaultConfig { env, method, out_dir, desk } => {
            let method = method.parse::<Method>()?;
            let cfg = if desk {
                ExperimentConfig::desk(&env, method, vec![0], out_dir)
            } else {
                ExperimentConfig::new(&env, method, 100, vec![0], out_dir)
            };
            cfg.validate()?;
            println!("{}", cfg.to_json()?);
        }
        Command::Pretrain { config, seeds, epochs, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(o) = out_dir {
                cfg.out_dir = o;
            }
            for dir in pretrain(&cfg)? {
                println!("{}", dir.display());
            }
        }
        Command::Evaluate { runs, planner, task, lambda, seeds } => {
            let planner = planner.parse::<Planner>()?;
            println!("run\tlambda\tepisodes\tmean_true\tci95_true\tmean_predicted\tenv_steps");
            for dir in runs {
                let config = dir.join("config.json");
                if !config.is_file() {
                    return Err(Error::config("run", format!("{} is not a run directory", dir.display())));
                }
                let cfg = ExperimentConfig::load(&config)?;
                let req = EvalRequest {
                    planner,
                    task: task.clone(),
                    lambdas: lambda.clone().unwrap_or_else(|| cfg.eval.lambdas.clone()),
                    seeds: seeds.clone().unwrap_or_else(|| cfg.eval.seeds.clone()),
                };
                let out = evaluate_run(&dir, &req)?;
                for l in &req.lambdas {
                    let rows: Vec<_> = out.rows.iter().filter(|r| r.lambda == *l).collect();
                    let truth: Vec<f64> = rows.iter().map(|r| r.true_return).collect();
                    let (mean, ci) = mean_ci95(&truth);
                    let pred = rows.iter().map(|r| r.predicted_return).sum::<f64>() / rows.len() as f64;
                    println!(
                        "{}\t{l}\t{}\t{mean:.3}\t{ci:.3}\t{pred:.3}\t{}",
                        dir.display(),
                        rows.len(),
                        out.env_steps
                    );
                }
            }
        }
        Command::Report { runs, out } => {
            let rows = build_report(&runs)?;
            match out {
                Some(path) => write_csv(&rows, BufWriter::new(File::create(path)?))?,
                None => write_csv(&rows, io::stdout().lock())?,
            }
        }
        Command::TabularVerify { instances, max_states, max_actions, latents, gamma, seed, out } => {
            let cfg = SweepConfig { instances, max_states, max_actions, n_latent: latents, gamma, seed };
            let rows = sweep(&cfg)?;
            if let Some(path) = out {
                let mut w = BufWriter::new(File::create(path)?);
                for row in &rows {
                    serde_json::to_writer(&mut w, row)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            println!("{:<24} {:>12} {:>12} {:>12}", "inequality", "min slack", "mean lhs", "mean rhs");
            let names: Vec<&str> = rows.first().map(|r| r.report.all().map(|(n, _)| n).to_vec()).unwrap_or_default();
            for (k, name) in names.iter().enumerate() {
                let reports: Vec<_> = rows.iter().map(|r| *r.report.all()[k].1).collect();
                let min = reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
                let n = reports.len() as f64;
                let lhs = reports.iter().map(|r| r.lhs).sum::<f64>() / n;
                let rhs = reports.iter().map(|r| r.rhs).sum::<f64>() / n;
                println!("{name:<24} {min:>12.3e} {lhs:>12.4} {rhs:>12.4}");
            }
            println!("{} instances, no violations", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
