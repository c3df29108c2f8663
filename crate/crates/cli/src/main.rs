//! `bijepa` command-line runner.
//!
//! Exit status: 0 on success, 1 when a run fails, 2 for bad flags or
//! configuration.

mod fetch;

use std::path::PathBuf;
use std::process::ExitCode;

use bijepa::experiment::{run_with, run_suite, Experiment, ExperimentError, RunConfig, SuiteConfig, Variant};
use bijepa::jepa::StepMetrics;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(version, about = "Train and evaluate BiJEPA on the sine, Lorenz and MNIST studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write report.json, loss.csv and forecasts or images.
    Run {
        #[command(flatten)]
        common: Common,
        /// bijepa-expressive, bijepa-unconstrained (sine only), bijepa-restrictive or classic.
        #[arg(long, default_value_t = Variant::BijepaExpressive)]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Every variant × seed combination, plus suite.csv with means and verdicts.
    Suite {
        #[command(flatten)]
        common: Common,
        /// Comma-separated; defaults to every variant valid for the experiment.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        seeds: Vec<u64>,
    },
    /// Download the four MNIST IDX files.
    FetchMnist {
        #[arg(long, default_value = "data/mnist")]
        out: PathBuf,
        #[arg(long, default_value = fetch::DEFAULT_BASE_URL)]
        base_url: String,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// sine, lorenz or mnist.
    #[arg(long)]
    experiment: Experiment,
    /// Forward-branch weight (ignored by the classic variant).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Output directory; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "BIJEPA_MNIST_DIR")]
    mnist_dir: Option<PathBuf>,
    /// Training steps; for MNIST a cap on the epoch budget.
    #[arg(long)]
    steps: Option<usize>,
    /// Hyperparameter override as a dotted path, e.g. `probe.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print loss every N steps on stderr (0 disables).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

impl Common {
    fn run_config(&self, variant: Variant, seed: u64) -> RunConfig {
        RunConfig {
            alpha: self.alpha,
            out_dir: self.out.clone(),
            mnist_dir: self.mnist_dir.clone(),
            steps: self.steps,
            overrides: self.overrides.clone(),
            ..RunConfig::new(self.experiment, variant, seed)
        }
    }
}

fn log_line(every: u64, prefix: &str, m: &StepMetrics) {
    if every > 0 && (m.step % every == 0 || m.diverged || m.halted) {
        eprintln!(
            "{prefix}step {:>6}  total {:.6}  fwd {:.6}  bwd {:.6}  |s| {:.3}{}",
            m.step,
            m.total,
            m.fwd,
            m.bwd,
            m.mean_embedding_norm,
            if m.halted { "  HALTED" } else { "" }
        );
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn exit_for(e: &ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() { 2 } else { 1 })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { common, variant, seed } => {
            let cfg = common.run_config(variant, seed);
            match run_with(&cfg, &mut |m| log_line(common.log_every, "", m)) {
                Ok(r) => {
                    println!("experiment        {}", r.experiment);
                    println!("variant           {}", r.variant);
                    println!("seed              {}", r.seed);
                    println!("steps             {}", r.loss_history.len());
                    println!("final_train_loss  {:.6}", r.final_train_loss);
                    println!("protocol_a_mse    {}", fmt_opt(r.protocol_a_mse));
                    println!("protocol_b_mse    {}", fmt_opt(r.protocol_b_mse));
                    println!("accuracy          {}", fmt_opt(r.accuracy));
                    println!("decoder_mse       {}", fmt_opt(r.decoder_mse));
                    println!("diverged          {}", r.diverged);
                    println!("wall_time_secs    {:.1}", r.wall_time_secs);
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Suite { common, variants, seeds } => {
            let variants = if variants.is_empty() {
                Variant::ALL
                    .into_iter()
                    .filter(|v| common.experiment == Experiment::Sine || *v != Variant::BijepaUnconstrained)
                    .collect()
            } else {
                variants
            };
            let cfg = SuiteConfig {
                experiment: common.experiment,
                variants,
                seeds,
                base: common.run_config(Variant::Classic, 0),
                out_dir: common.out.clone(),
            };
            let every = common.log_every;
            match run_suite(&cfg, &mut |v, s, m| log_line(every, &format!("[{v} seed {s}] "), m)) {
                Ok(summary) => {
                    print!("{}", summary.to_csv());
                    if summary.rows.iter().any(|r| r.result.is_err()) {
                        ExitCode::from(1)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::FetchMnist { out, base_url } => match fetch::fetch_mnist(&out, &base_url) {
            Ok(fetched) if fetched.is_empty() => {
                println!("{}: all files present", out.display());
                ExitCode::SUCCESS
            }
            Ok(fetched) => {
                for f in fetched {
                    println!("{}", out.join(f).display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
