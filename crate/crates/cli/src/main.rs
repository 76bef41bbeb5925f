use std::path::PathBuf;
use std::process::ExitCode;

use ada_cli::benchmark::cmd_benchmark;
use ada_cli::config::{LoadedConfig, ProblemKind};
use ada_cli::diagnose::{cmd_diagnose, DiagnoseOptions};
use ada_cli::problem::build_problem;
use ada_cli::run::{cmd_run, Context, Overrides};
use ada_cli::verify::cmd_verify;
use ada_cli::{CliError, CliResult};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ada", version, about = "Delayed-acceptance MCMC experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured number of chains.
    #[arg(long)]
    chains: Option<u32>,
}

impl RunArgs {
    fn context(&self) -> CliResult<Context> {
        let cfg = LoadedConfig::load(&self.config)?;
        Context::new(
            cfg,
            &Overrides {
                seed: self.seed,
                chains: self.chains,
                out: self.out.clone(),
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run chains and write traces, checkpoints and summaries.
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Continue from a checkpoint file, or from every checkpoint in a run directory.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Reference MH plus ADA under each approximation, with an efficiency table.
    Benchmark {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Brute-force kernel checks and estimator recursion checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// IACT/ESS, acceptance rates, running means and histograms of traces.
    Diagnose {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Configuration that produced the traces; enables log-likelihood IACTs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the plot-ready tables.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        burn_in: u64,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { args, resume } => {
            let ctx = args.context()?;
            let rep = cmd_run(&ctx, resume.as_deref())?;
            for c in &rep.chains {
                let e = c.efficiency.as_ref();
                println!(
                    "chain {}: {} iterations, stage-one rate {}, stage-two rate {}, IACT {}",
                    c.chain,
                    c.iterations,
                    e.and_then(|e| e.alpha).map_or("-".into(), |v| format!("{v:.3}")),
                    e.and_then(|e| e.beta).map_or("-".into(), |v| format!("{v:.3}")),
                    e.and_then(|e| e.tau).map_or("-".into(), |t| format!("{:.2}", t.tau)),
                );
            }
            println!("output in {}", rep.variant.dir.display());
            Ok(())
        }
        Command::Benchmark { args } => {
            let ctx = args.context()?;
            let rep = cmd_benchmark(&ctx)?;
            print!("{}", rep.table());
            if rep.complete() {
                Ok(())
            } else {
                Err(CliError::Runtime("benchmark incomplete".into()))
            }
        }
        Command::Verify { seed } => {
            print!("{}", cmd_verify(seed)?);
            Ok(())
        }
        Command::Diagnose {
            traces,
            config,
            out,
            burn_in,
            bins,
        } => {
            let opts = DiagnoseOptions {
                burn_in,
                bins,
                out,
                ..DiagnoseOptions::default()
            };
            let problem = match &config {
                Some(p) => {
                    let cfg = LoadedConfig::load(p)?;
                    match cfg.resolve()?.problem {
                        ProblemKind::DiscreteToy => None,
                        k => Some(build_problem(&cfg, k)?),
                    }
                }
                None => None,
            };
            let lp = problem.as_ref().map(|p| {
                let post = p.posterior.clone();
                move |x: &[f64]| post.log_prior(x)
            });
            let (text, _) = cmd_diagnose(&traces, &opts, lp.as_ref().map(|f| f as &dyn Fn(&[f64]) -> f64))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
