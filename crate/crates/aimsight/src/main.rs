use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use aimsight::config::{load_plan, load_session, to_toml};
use aimsight::observations::{fit_report, read_csv, write_csv, SyntheticStudy};
use aimsight::protocol::ServerState;
use aimsight::realtime::{SessionConfig, SystemClock};
use aimsight::runner::{run_plan, run_plan_logged, summary_table, write_outputs};
use aimsight::trial_log::{read_log, replay, write_samples};
use aimsight_core::experiment::ExperimentPlan;
use aimsight_core::gaze_models::CvSettings;
use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aimsight", version, about = "Gaze-aware handheld robot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Plan,
    Session,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the gaze error and trackability models to a CSV of observations.
    FitGaze {
        observations: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Write synthetic observations shaped like the published study.
    GenerateGaze {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 330)]
        looking: usize,
        #[arg(long, default_value_t = 0)]
        pointing: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment plan with synthetic participants.
    Experiment {
        /// TOML plan; defaults are used for absent keys.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one JSONL log per trial under `<out>/logs`.
        #[arg(long)]
        logs: bool,
    },
    /// Host live sessions over a websocket at ws://0.0.0.0:<port>/ws.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// TOML session config; defaults are used for absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the logs of finished trials.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Replay a trial log and check it reproduces its samples and score.
    Replay {
        log: PathBuf,
        /// Write the replayed samples here as JSONL.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Print a default configuration file.
    Defaults {
        #[arg(value_enum)]
        kind: ConfigKind,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::FitGaze { observations, seed, folds } => {
            let obs = read_csv(&observations)?;
            let settings = CvSettings { folds, seed, ..CvSettings::default() };
            let report = fit_report(&obs, &settings);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GenerateGaze { out, looking, pointing, seed } => {
            let obs = SyntheticStudy::default().generate(looking, pointing, seed);
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_csv(file, &obs)?;
        }
        Command::Experiment { plan, out, logs } => {
            let plan = match plan {
                Some(p) => load_plan(&p)?,
                None => ExperimentPlan::default(),
            };
            let results = if logs { run_plan_logged(&plan, &out.join("logs"))? } else { run_plan(&plan)? };
            let stats = write_outputs(&out, &plan, &results)?;
            print!("{}", summary_table(&stats));
        }
        Command::Serve { port, config, log_dir } => {
            let config = match config {
                Some(p) => load_session(&p)?,
                None => SessionConfig::default(),
            };
            if let Some(dir) = &log_dir {
                std::fs::create_dir_all(dir)?;
            }
            let state = Arc::new(ServerState::new(config, log_dir, Arc::new(SystemClock::new()))?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                eprintln!("listening on ws://{}/ws", listener.local_addr()?);
                aimsight::server::serve(listener, state).await
            })?;
        }
        Command::Replay { log, samples } => {
            let file = std::fs::File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let trial = read_log(BufReader::new(file))?;
            let outcome = replay(&trial);
            if let Some(path) = samples {
                write_samples(std::fs::File::create(path)?, &outcome.samples)?;
            }
            let s = outcome.score;
            println!(
                "trial {} {} seed {}: {} ticks, completed {} of {}, replay {}",
                trial.header.trial_id,
                trial.header.mode,
                trial.header.seed,
                trial.ticks.len(),
                s.completed,
                s.total_spawned,
                if outcome.matches { "matches" } else { "DIFFERS" }
            );
            if !outcome.matches {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Defaults { kind } => {
            let text = match kind {
                ConfigKind::Plan => to_toml(&ExperimentPlan::default())?,
                ConfigKind::Session => to_toml(&SessionConfig::default())?,
            };
            print!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
