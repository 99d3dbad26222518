//! `dpcandle`: data generation, training sweeps, privacy accounting and
//! reporting for differentially private candlestick classification.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use dpcandle::experiment::{self, AccountQuery, Context, ExperimentConfig};
use dpcandle::par;

#[derive(Parser, Debug)]
#[command(name = "dpcandle", version, about)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset (or label a CSV of bars).
    GenData,
    /// Train the non-private baseline.
    TrainBaseline,
    /// Run the DP-SGD (clip bound × noise multiplier) sweep.
    TrainDpsgd,
    /// Run the PATE (teacher count × Laplace scale) sweep.
    TrainPate,
    /// Print the (ε, δ) guarantee of a mechanism.
    Account(AccountArgs),
    /// Render the result tables in the output directory.
    Report,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args, Debug)]
struct AccountArgs {
    /// DP-SGD sampling rate q.
    #[arg(long, requires_all = ["sigma", "steps"], conflicts_with_all = ["gamma", "queries"])]
    q: Option<f64>,
    /// DP-SGD noise multiplier.
    #[arg(long)]
    sigma: Option<f64>,
    /// DP-SGD steps.
    #[arg(long)]
    steps: Option<u64>,
    /// PATE inverse Laplace scale γ.
    #[arg(long, requires = "queries")]
    gamma: Option<f64>,
    /// PATE label queries.
    #[arg(long)]
    queries: Option<u64>,
    /// Target δ.
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
}

impl AccountArgs {
    fn query(&self) -> Result<AccountQuery> {
        match (self.q, self.sigma, self.steps, self.gamma, self.queries) {
            (Some(q), Some(sigma), Some(steps), None, None) => Ok(AccountQuery::Gaussian {
                q,
                sigma,
                steps,
                delta: self.delta,
            }),
            (None, None, None, Some(gamma), Some(queries)) => Ok(AccountQuery::Pate {
                gamma,
                queries,
                delta: self.delta,
            }),
            _ => bail!("give either --q --sigma --steps or --gamma --queries"),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Account(args) = &cli.command {
        let g = experiment::cmd_account(args.query()?)?;
        println!("{g}");
        return Ok(());
    }
    if let Command::Report = cli.command {
        print!("{}", experiment::cmd_report(&cli.out)?);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let ctx = Context::new(cfg, &cli.out);
    match cli.command {
        Command::GenData => {
            let d = experiment::cmd_gen_data(&ctx)?;
            println!(
                "wrote {} train and {} test windows to {}",
                d.train.len(),
                d.test.len(),
                cli.out.join("data").display()
            );
        }
        Command::TrainBaseline => {
            for (k, r) in experiment::cmd_train_baseline(&ctx)?.iter().enumerate() {
                match r.accuracy {
                    Some(a) => println!("seed {k}: test accuracy {:.4}", a),
                    None => println!("seed {k}: no epochs run"),
                }
            }
        }
        Command::TrainDpsgd => {
            for r in experiment::cmd_train_dpsgd(&ctx)? {
                println!(
                    "C={} sigma={}: accuracy {:.4} epsilon={} private={}",
                    r.clip_bound, r.noise_multiplier, r.accuracy_mean, r.epsilon, r.private
                );
            }
        }
        Command::TrainPate => {
            for r in experiment::cmd_train_pate(&ctx)? {
                println!(
                    "b={} N={}: accuracy {:.4} epsilon={}",
                    r.laplace_scale, r.teacher_count, r.accuracy_mean, r.epsilon
                );
            }
        }
        Command::Account(_) | Command::Report | Command::ShowConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match par::with_jobs(cli.jobs, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
