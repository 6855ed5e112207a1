use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lease_audit_cli::pipeline::{self, Artifacts, ReportInputs};
use lease_audit_cli::{AuditConfig, CliError, Overrides};
use lease_audit_core::MatchLevel;

#[derive(Parser)]
#[command(
    name = "lease-audit",
    version,
    about = "Lease-completeness audit over cash-outflow journals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Matching level: 1 exchanges names, 2 exchanges names and amounts.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    level: Option<u8>,
    /// Overrides the configured episode count.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic journal and its ground truth.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Use a built-in fixture instead of the config's scenario.
        #[arg(long)]
        fixture: Option<String>,
    },
    /// Ingest a journal and train one Q-table per department.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Audit a single department.
        #[arg(long)]
        department: Option<String>,
    },
    /// Follow the trained policies and list lease candidates.
    Rollout {
        #[command(flatten)]
        common: Common,
    },
    /// Measure recognized candidates.
    Measure {
        #[command(flatten)]
        common: Common,
    },
    /// Assemble the audit report.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        department: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<AuditConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => AuditConfig::load(path)?,
        None => AuditConfig::default(),
    };
    config.apply(&Overrides {
        seed: common.seed,
        level: common
            .level
            .map(|l| MatchLevel::try_from(l).expect("range-checked by clap")),
        episodes: common.episodes,
    });
    config.validate()?;
    Ok(config)
}

fn finish(out: &Path, artifacts: Artifacts) -> Result<(), CliError> {
    artifacts.commit(out)?;
    let mut stdout = std::io::stdout().lock();
    for p in artifacts.paths() {
        // a closed pipe (e.g. `| head`) is not a failure; the files are written
        if writeln!(stdout, "{}", out.join(p).display()).is_err() {
            break;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common, fixture } => {
            let config = load_config(&common)?;
            finish(
                &common.out,
                pipeline::generate_stage(&config, fixture.as_deref())?,
            )
        }
        Command::Train {
            common,
            input,
            department,
        } => {
            let config = load_config(&common)?;
            let train = pipeline::train_stage(&config, &input, department.as_deref())?;
            for d in &train.index.departments {
                eprintln!(
                    "{}: {:?} converged_at={:?} best={}",
                    d.department, d.mode, d.converged_at, d.best_reward
                );
            }
            finish(&common.out, train.artifacts)
        }
        Command::Rollout { common } => {
            let config = load_config(&common)?;
            let (parsed, index, tables) = pipeline::load_training(&common.out)?;
            finish(
                &common.out,
                pipeline::rollout_stage(&config, &parsed, &index, &tables)?.artifacts,
            )
        }
        Command::Measure { common } => {
            let config = load_config(&common)?;
            let candidates = pipeline::load_candidates(&common.out)?;
            finish(
                &common.out,
                pipeline::measure_stage(&config, &candidates)?.artifacts,
            )
        }
        Command::Report { common } => {
            let config = load_config(&common)?;
            let (parsed, index, rollouts, candidates, measurements) =
                pipeline::load_report_inputs(&common.out)?;
            let report = pipeline::build_report(
                &config,
                &ReportInputs {
                    parsed: &parsed,
                    index: &index,
                    rollouts: &rollouts,
                    candidates: &candidates,
                    measurements: &measurements,
                },
            )?;
            finish(&common.out, pipeline::report_artifacts(&report))
        }
        Command::Audit {
            common,
            input,
            department,
        } => {
            let config = load_config(&common)?;
            let out = pipeline::run_audit(&config, &input, department.as_deref())?;
            finish(&common.out, out.artifacts)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(problems) => {
                    eprintln!("error: invalid configuration");
                    for p in problems {
                        eprintln!("  {p}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
