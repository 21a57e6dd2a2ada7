use std::path::PathBuf;
use std::process::ExitCode;

use advest::config::{LoadedConfig, Overrides};
use advest::verify::{self, Fixture};
use advest::{profile, run, sweep, HarnessError, Result};
use advest_core::ppo::EvalMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "advest", version, about = "PPO with partial GAE: training, sweeps, variance profiles, self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the trainer seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the environment-step budget.
    #[arg(long)]
    budget_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mutation {
    /// Flip the sign of the γλ term in the GAE recursion.
    GaeSignFlip,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run; writes runlog.csv, checkpoint.bin and manifest.json.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train every (T, epsilon, seed) cell; writes heatmap.csv.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Per-position spread of truncated GAE; writes profile.csv.
    ProfileVariance {
        #[command(flatten)]
        args: ConfigArgs,
        /// Take policy and value network from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Segments to sample (overrides profile.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run the identity and oracle checks; exit 0 iff all pass.
    Verify {
        /// Only run this suite (or checks whose name contains it).
        #[arg(long)]
        filter: Option<String>,
        /// Run against a deliberately broken implementation.
        #[arg(long, hide = true)]
        mutation: Option<Mutation>,
    },
    /// Evaluate a checkpoint's policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Greedy)]
        mode: Mode,
        /// Also write eval.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs) -> Result<LoadedConfig> {
    let mut loaded = LoadedConfig::load(&args.config)?;
    loaded.apply(&Overrides {
        seed: args.seed,
        budget_steps: args.budget_steps,
        out_dir: args.out.clone(),
    });
    loaded.validate()?;
    Ok(loaded)
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { args, resume } => {
            let loaded = load(&args)?;
            let outcome = run::train(&loaded.config, resume.as_deref())?;
            let last = outcome.log.records.last();
            println!(
                "trained {} iterations, {} env steps, mean_return_100 {:.3}; wrote {}",
                outcome.log.records.len(),
                last.map_or(0, |r| r.env_steps),
                last.map_or(0.0, |r| r.mean_return_100),
                outcome.out_dir.display()
            );
        }
        Command::Sweep { args } => {
            let loaded = load(&args)?;
            let outcome = sweep::sweep(&loaded.config)?;
            for row in &outcome.summary {
                println!(
                    "T={:<5} epsilon={:<5} seeds={} metric {:.3} ± {:.3}",
                    row.sample_length, row.epsilon, row.n_seeds, row.mean_metric, row.std_metric
                );
            }
            println!(
                "{} cells, {} skipped, {} failed; wrote {}",
                outcome.rows.len(),
                outcome.skipped.len(),
                outcome.failures.len(),
                outcome.out_dir.join(sweep::HEATMAP_FILE).display()
            );
            if !outcome.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::ProfileVariance { args, checkpoint, count } => {
            let mut loaded = load(&args)?;
            if let Some(count) = count {
                if count < 100 {
                    return Err(HarnessError::Config("--count must be at least 100".into()));
                }
                loaded.config.profile.count = count;
            }
            let table = profile::profile(&loaded.config, checkpoint.as_deref())?;
            println!(
                "{} positions from {} segments; wrote {}",
                table.rows.len(),
                loaded.config.profile.count,
                loaded.config.out_dir.join(profile::PROFILE_FILE).display()
            );
        }
        Command::Verify { filter, mutation } => {
            let fixture = match mutation {
                None => Fixture::default(),
                Some(Mutation::GaeSignFlip) => Fixture {
                    gae: verify::sign_flipped_gae,
                },
            };
            let results = verify::run(filter.as_deref(), &fixture);
            if results.is_empty() {
                return Err(HarnessError::Config(format!(
                    "--filter {:?} matches no check; suites: {}",
                    filter.unwrap_or_default(),
                    verify::SUITES.join(", ")
                )));
            }
            print!("{}", verify::format_table(&results));
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            mode,
            out,
        } => {
            let mode = match mode {
                Mode::Greedy => EvalMode::Greedy,
                Mode::Sample => EvalMode::Sample,
            };
            let eval = run::eval_checkpoint(&checkpoint, episodes, seed, mode)?;
            println!("{}", serde_json::to_string(&eval)?);
            if let Some(dir) = out {
                run::write_json(&dir.join("eval.json"), &eval)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
