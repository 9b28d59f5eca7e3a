//! `skillspiral` command-line tool.

use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use skillspiral::evolution::{
    ablation_table, csv_header, csv_row, env_factory, evaluate, load_reports, replay_in_run, run_spiral, stage_table,
    EvalRequest, EvolutionConfig, Mode, ReplayError, ReplayVerdict, RunDir, Runtime, StopReason, RUN_MANIFEST,
};
use skillspiral::executor::{Executor, Provider, RemoteExecutor};
use skillspiral::microworld::protocol;
use skillspiral::revision::{diff_bodies, RuleDiff};
use skillspiral::skill::Skill;
use skillspiral::store::to_document;
use skillspiral::trajectory::DEFAULT_HORIZON;

#[derive(Parser)]
#[command(name = "skillspiral", version, about = "Evolve an agent skill from its own trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the evolution loop into a fresh run directory.
    Evolve {
        /// TOML config file; defaults are used for anything it leaves out.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `dotted.key=value` override, applied after the file. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shorthand for `--set mode=...`.
        #[arg(long)]
        mode: Option<Mode>,
        /// Shorthand for `--set master_seed=...`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; must be absent or empty.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one stored skill version on the run's held-out tasks.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the latest stored version.
        #[arg(long)]
        version: Option<u64>,
        /// Overrides on the run's recorded config (e.g. `test.per_family=5`).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Re-execute a logged trajectory and compare it step by step.
    Replay {
        trajectory: PathBuf,
        /// Run directory holding the skill store; inferred from the log path if omitted.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Stage table for one run; comparison table for several.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Print the per-stage CSV instead of the table (single run only).
        #[arg(long)]
        csv: bool,
    },
    /// Inspect stored skill versions.
    Skill {
        #[command(subcommand)]
        command: SkillCommand,
    },
    /// Serve the micro-world over the JSON-lines protocol.
    Serve {
        /// Listen on this address instead of stdio; one episode per connection.
        #[arg(long)]
        tcp: Option<String>,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
    },
}

#[derive(Subcommand)]
enum SkillCommand {
    Show {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        version: Option<u64>,
    },
    Diff {
        #[arg(long)]
        run: PathBuf,
        from: u64,
        to: u64,
    },
}

/// Exit status 2: the request itself was bad (config, arguments).
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Evolve {
            config,
            mut overrides,
            mode,
            seed,
            out,
        } => {
            if let Some(m) = mode {
                overrides.push(format!("mode={m}"));
            }
            if let Some(s) = seed {
                overrides.push(format!("master_seed={s}"));
            }
            let config = EvolutionConfig::load(config.as_deref(), &overrides).map_err(usage)?;
            evolve(&config, &out)
        }
        Command::Eval {
            run,
            version,
            overrides,
        } => eval(&run, version, &overrides),
        Command::Replay { trajectory, run } => replay(&trajectory, run),
        Command::Report { runs, csv } => report(&runs, csv),
        Command::Skill { command } => skill(command),
        Command::Serve { tcp, horizon } => serve(tcp.as_deref(), horizon),
    }
}

fn evolve(config: &EvolutionConfig, out: &Path) -> Result<ExitCode> {
    let dir = RunDir::create(out).map_err(usage)?;
    let runtime = Runtime::from_config(config, Some(&dir))?;
    let outcome = run_spiral(config, &runtime, Some(&dir))?;
    print!("{}", stage_table(&outcome.reports));
    println!(
        "{} revisions over {} training episodes ({}); run directory {}",
        outcome.revisions,
        outcome.train_episodes,
        match outcome.stopped {
            StopReason::Completed => "completed",
            StopReason::EpisodeCap => "stopped at the episode cap",
        },
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(run: &Path, version: Option<u64>, overrides: &[String]) -> Result<ExitCode> {
    let dir = RunDir::open(run).map_err(usage)?;
    let manifest = dir.manifest()?;
    let config = manifest.config.with_overrides(overrides).map_err(usage)?;
    let store = dir.store()?;
    let version = match version {
        Some(v) => v,
        None => store.latest()?.ok_or_else(|| anyhow!("run has no stored skill"))?,
    };
    let skill = store.load_version(version)?;
    let runtime = Runtime::from_config(&config, None)?;
    let executor = match &runtime.gateway {
        Some(g) if config.executor.provider == Provider::RemoteModel => {
            Executor::Remote(RemoteExecutor::new(config.executor.clone(), g.clone()))
        }
        _ => Executor::RuleBased(config.executor.clone()),
    };
    let tasks = config.test.tasks();
    let req = EvalRequest {
        stage: 0,
        skill: &skill,
        tasks: &tasks,
        executor: &executor,
        horizon: config.horizon,
        master_seed: config.master_seed,
    };
    let (report, _) = evaluate(&req, runtime.env_factory.as_ref());
    print!("{}", stage_table(std::slice::from_ref(&report)));
    Ok(ExitCode::SUCCESS)
}

/// `<run>/trajectories/<split>/<id>.jsonl` -> `<run>`.
fn infer_run(log: &Path) -> Option<PathBuf> {
    log.ancestors()
        .skip(1)
        .find(|p| p.join(RUN_MANIFEST).is_file())
        .map(Path::to_path_buf)
}

fn replay(log: &Path, run: Option<PathBuf>) -> Result<ExitCode> {
    let run = match run.or_else(|| infer_run(log)) {
        Some(r) => r,
        None => return Err(usage(anyhow!("cannot find the run directory for {}; pass --run", log.display()))),
    };
    let dir = RunDir::open(&run).map_err(usage)?;
    let config = dir.manifest()?.config;
    let factory = env_factory(&config.environment, config.horizon);
    match replay_in_run(&dir, log, factory.as_ref()) {
        Ok(ReplayVerdict::Identical) => {
            println!("identical");
            Ok(ExitCode::SUCCESS)
        }
        Ok(ReplayVerdict::Diverged { step, expected, got }) => {
            println!("diverged at step {step}\n  logged:   {expected}\n  replayed: {got}");
            Ok(ExitCode::FAILURE)
        }
        Err(e @ ReplayError::MissingSidecar(_)) => Err(usage(e)),
        Err(e) => Err(e.into()),
    }
}

fn report(runs: &[PathBuf], csv: bool) -> Result<ExitCode> {
    let mut loaded = Vec::new();
    for run in runs {
        let dir = RunDir::open(run).map_err(usage)?;
        loaded.push((run, load_reports(&dir)?));
    }
    if csv {
        if loaded.len() != 1 {
            bail!(usage(anyhow!("--csv takes exactly one run directory")));
        }
        println!("{}", csv_header());
        for r in &loaded[0].1 .1 {
            println!("{}", csv_row(r));
        }
        return Ok(ExitCode::SUCCESS);
    }
    for (run, (summary, reports)) in &loaded {
        println!("{} ({} seed {})", run.display(), summary.mode, summary.master_seed);
        print!("{}", stage_table(reports));
        println!();
    }
    if loaded.len() > 1 {
        let summaries: Vec<_> = loaded.iter().map(|(_, (s, _))| s.clone()).collect();
        print!("{}", ablation_table(&summaries));
    }
    Ok(ExitCode::SUCCESS)
}

fn skill(command: SkillCommand) -> Result<ExitCode> {
    match command {
        SkillCommand::Show { run, version } => {
            let store = RunDir::open(&run).map_err(usage)?.store()?;
            let skill = match version {
                Some(v) => store.load_version(v)?,
                None => store.load_latest()?.ok_or_else(|| anyhow!("run has no stored skill"))?,
            };
            print!("{}", to_document(&skill));
        }
        SkillCommand::Diff { run, from, to } => {
            let store = RunDir::open(&run).map_err(usage)?.store()?;
            let (a, b) = (store.load_version(from)?, store.load_version(to)?);
            let diff = diff_bodies(&a.body, &b.body);
            if diff.is_empty() {
                println!("body unchanged");
            }
            for d in diff {
                match d {
                    RuleDiff::Added { rule_id, text } => println!("+ {rule_id}: {text}"),
                    RuleDiff::Removed { rule_id, text } => println!("- {rule_id}: {text}"),
                    RuleDiff::Edited { rule_id, before, after } => {
                        println!("~ {rule_id}: {before}\n  {:width$}  -> {after}", "", width = rule_id.as_str().len())
                    }
                }
            }
            let anchors = |s: &Skill| {
                s.appendix
                    .iter()
                    .map(|a| format!("{} x{}", a.anchor_rule_id, a.lapse_count))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            println!("appendix v{from}: [{}]\nappendix v{to}: [{}]", anchors(&a), anchors(&b));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(tcp: Option<&str>, horizon: usize) -> Result<ExitCode> {
    match tcp {
        None => {
            let stdin = io::stdin();
            protocol::serve(stdin.lock(), io::stdout().lock(), horizon)?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            for conn in listener.incoming() {
                let stream = conn?;
                let reader = BufReader::new(stream.try_clone()?);
                if let Err(e) = protocol::serve(reader, stream, horizon) {
                    log::warn!("connection ended: {e}");
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
