use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bta_core::harness::{
    latest_run_dir, new_run_dir, read_timings, scale_scenario, Run, RunReport, ScenarioConfig,
    Stage,
};
use bta_core::{Error, Result};

#[derive(Parser)]
#[command(name = "bta", version, about = "Sparse realized adversarial attacks on a simulated index")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to runs/<config hash>-<timestamp>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    Generate(StageArgs),
    Train(StageArgs),
    Attack(StageArgs),
    Realize(StageArgs),
    Feedback(StageArgs),
    Transfer(StageArgs),
    Defend(StageArgs),
    /// Consolidated JSON summary of a run.
    Report {
        #[arg(long, conflicts_with = "config")]
        run: Option<PathBuf>,
        #[command(flatten)]
        stage: Option<StageArgs>,
    },
    /// Every stage in order.
    Run(StageArgs),
    /// Check a config and print its hash.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a smaller scenario keeping the largest-cap stocks.
    Scale {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        factor: f64,
        #[arg(long)]
        output: PathBuf,
    },
}

const RUNS_ROOT: &str = "runs";

fn load_config(args: &StageArgs) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn resolve_run(args: &StageArgs, fresh: bool) -> Result<Run> {
    let cfg = load_config(args)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None if fresh => new_run_dir(Path::new(RUNS_ROOT), &cfg)?,
        None => latest_run_dir(Path::new(RUNS_ROOT), &cfg)?.ok_or_else(|| Error::Dependency {
            stage: Stage::Generate.name().into(),
            path: PathBuf::from(RUNS_ROOT).join(format!("{}-*", cfg.hash12().unwrap_or_default())),
        })?,
    };
    Ok(Run::new(dir, cfg))
}

fn print_summary(dir: &Path) -> Result<()> {
    let summary = serde_json::json!({
        "run_dir": dir.display().to_string(),
        "report": RunReport::load(dir)?,
        "timings": read_timings(dir)?,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let (stage, args) = match cli.command {
        Command::Generate(a) => (Stage::Generate, a),
        Command::Train(a) => (Stage::Train, a),
        Command::Attack(a) => (Stage::Attack, a),
        Command::Realize(a) => (Stage::Realize, a),
        Command::Feedback(a) => (Stage::Feedback, a),
        Command::Transfer(a) => (Stage::Transfer, a),
        Command::Defend(a) => (Stage::Defend, a),
        Command::Report { run: Some(dir), .. } => {
            let cfg = ScenarioConfig::load(&dir.join("scenario.toml")).map_err(|e| match e {
                Error::Io { path, .. } => Error::Dependency {
                    stage: Stage::Generate.name().into(),
                    path,
                },
                other => other,
            })?;
            Run::new(&dir, cfg).run_stage(Stage::Report)?;
            return print_summary(&dir);
        }
        Command::Report { stage: Some(a), .. } => {
            let run = resolve_run(&a, false)?;
            run.run_stage(Stage::Report)?;
            return print_summary(&run.dir);
        }
        Command::Report { .. } => {
            return Err(Error::Validation {
                key: "report".into(),
                reason: "pass --run <dir> or --config <path>".into(),
            })
        }
        Command::Run(a) => {
            let run = resolve_run(&a, true)?;
            run.run_all()?;
            return print_summary(&run.dir);
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            println!("ok {}", cfg.hash12()?);
            return Ok(());
        }
        Command::Scale {
            config,
            factor,
            output,
        } => {
            let cfg = scale_scenario(&ScenarioConfig::load(&config)?, factor)?;
            std::fs::write(&output, cfg.to_toml()?).map_err(|e| Error::Io {
                path: output.clone(),
                source: e,
            })?;
            println!("{} stocks -> {}", cfg.n_stocks(), output.display());
            return Ok(());
        }
    };
    let run = resolve_run(&args, stage == Stage::Generate)?;
    for p in run.run_stage(stage)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
