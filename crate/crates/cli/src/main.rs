//! `mirrorplay simulate|verify|mc --config <path>`
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
//! 3 numeric or domain error.

mod checks;
mod config;
mod output;
mod report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mirrorplay::dynamics::integrate_mp;
use mirrorplay::mdg::DifferentialGame;
use mirrorplay::stochastic::{ensemble_stats, euler_maruyama_paths, EnsembleStats};
use serde::Serialize;

use checks::{run_check, CheckContext, Status, MC_CHECKS};
use config::{parse_config, ConfigError, Format, RunConfig, Scenario};
use report::{config_hash, RunStatus, VerificationReport, VERSION};

#[derive(Parser)]
#[command(name = "mirrorplay", version, about = "Mirror play simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic flow and write the trajectory.
    Simulate(Overrides),
    /// Run the configured checks and write a verification report.
    Verify(Overrides),
    /// Run the Monte Carlo ensemble and its bound checks.
    Mc(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated check names, overriding `checks`.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Output(e)) => {
            eprintln!("output error: {e}");
            ExitCode::from(3)
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Output(String),
}

fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(value) = std::env::var("MIRRORPLAY_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().map_err(|_| ConfigError::Invalid {
        field: "MIRRORPLAY_THREADS".into(),
        message: format!("expected a non-negative integer, got `{value}`"),
    })?;
    if threads > 0 {
        // Only fails if a pool was already built, which never happens here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

fn load(o: &Overrides) -> Result<(RunConfig, Scenario), CliError> {
    let mut cfg = parse_config(&o.config)?;
    if let Some(dir) = &o.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(checks) = &o.checks {
        cfg.checks = checks.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    // Each requested check is reported once, in first-requested order.
    let mut seen = std::collections::HashSet::new();
    cfg.checks.retain(|c| seen.insert(c.clone()));
    let scenario = cfg.build()?;
    Ok((cfg, scenario))
}

fn run(command: &Command) -> Result<u8, CliError> {
    configure_threads()?;
    let (Command::Simulate(o) | Command::Verify(o) | Command::Mc(o)) = command;
    let (cfg, scenario) = load(o)?;
    if matches!(command, Command::Mc(_)) && scenario.sde.is_none() {
        return Err(ConfigError::Invalid {
            field: "stochastic".into(),
            message: "the mc command needs a stochastic section".into(),
        }
        .into());
    }
    fs::create_dir_all(&cfg.output.dir).map_err(output_err)?;
    fs::write(cfg.output.dir.join("config.json"), cfg.to_json() + "\n").map_err(output_err)?;
    match command {
        Command::Simulate(_) => simulate(&cfg, &scenario),
        Command::Verify(_) => verify(&cfg, &scenario),
        Command::Mc(_) => mc(&cfg, &scenario),
    }
}

#[derive(Serialize)]
struct SimulationSummary {
    schema: u32,
    command: &'static str,
    version: &'static str,
    config_hash: String,
    game: String,
    horizon: f64,
    dt: f64,
    steps: Option<usize>,
    rows: Option<usize>,
    #[serde(serialize_with = "report::floats")]
    equilibrium: Vec<f64>,
    #[serde(serialize_with = "report::floats")]
    terminal_state: Vec<f64>,
    #[serde(serialize_with = "report::floats")]
    terminal_primal: Vec<f64>,
    #[serde(serialize_with = "report::opt_float")]
    value_initial: Option<f64>,
    #[serde(serialize_with = "report::opt_float")]
    value_terminal: Option<f64>,
    failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn simulate(cfg: &RunConfig, scenario: &Scenario) -> Result<u8, CliError> {
    let dir = &cfg.output.dir;
    let mut summary = SimulationSummary {
        schema: config::SCHEMA_VERSION,
        command: "simulate",
        version: VERSION,
        config_hash: config_hash(cfg),
        game: scenario.game.name().to_string(),
        horizon: scenario.sim.horizon,
        dt: scenario.sim.dt,
        steps: None,
        rows: None,
        equilibrium: Vec::new(),
        terminal_state: Vec::new(),
        terminal_primal: Vec::new(),
        value_initial: None,
        value_terminal: None,
        failed: false,
        error: None,
    };
    let result = (|| -> Result<(), Box<dyn std::error::Error>> {
        let dg = DifferentialGame::new(scenario.game.as_ref(), &scenario.mirror)?;
        summary.equilibrium = dg.equilibrium_primal().to_vec();
        let traj = integrate_mp(scenario.game.as_ref(), &scenario.mirror, &scenario.sim)?;
        summary.steps = Some(traj.len() - 1);
        summary.terminal_state = traj.terminal_state().to_vec();
        summary.terminal_primal = traj.terminal_primal().to_vec();
        summary.value_initial = Some(dg.total_value(traj.state(0))?);
        summary.value_terminal = Some(dg.total_value(traj.terminal_state())?);
        if cfg.output.wants(Format::Csv) {
            summary.rows = Some(output::write_trajectory_csv(
                &dir.join("trajectory.csv"),
                &dg,
                &traj,
                cfg.output.stride,
            )?);
        }
        Ok(())
    })();
    let code = match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("simulate: {e}");
            summary.failed = true;
            summary.error = Some(e.to_string());
            3
        }
    };
    if cfg.output.wants(Format::Json) || summary.failed {
        output::write_json(&dir.join("summary.json"), &summary).map_err(output_err)?;
    }
    Ok(code)
}

fn print_records(report: &VerificationReport) {
    for r in &report.checks {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Skipped => "skip",
        };
        let detail = r.error.as_deref().or(r.note.as_deref()).unwrap_or("");
        println!("{status:<5} {:<22} {detail}", r.name);
    }
}

fn verify(cfg: &RunConfig, scenario: &Scenario) -> Result<u8, CliError> {
    let report = match CheckContext::new(scenario, cfg.seed) {
        Ok(ctx) => {
            let records = cfg.checks.iter().map(|name| run_check(&ctx, name)).collect();
            VerificationReport::new("verify", cfg, records)
        }
        Err(e) => VerificationReport::aborted("verify", cfg, &e),
    };
    output::write_json(&cfg.output.dir.join("report.json"), &report).map_err(output_err)?;
    print_records(&report);
    Ok(report.status.exit_code())
}

#[derive(Serialize)]
struct McSummary<'a> {
    stats: Option<StatsJson<'a>>,
    report: &'a VerificationReport,
}

#[derive(Serialize)]
struct StatsJson<'a> {
    paths_used: usize,
    aborted: usize,
    #[serde(serialize_with = "report::floats")]
    times: &'a [f64],
    #[serde(serialize_with = "report::floats")]
    mean: &'a [f64],
    #[serde(serialize_with = "report::floats")]
    se: &'a [f64],
    #[serde(serialize_with = "report::floats")]
    time_average_mean: &'a [f64],
    #[serde(serialize_with = "report::floats")]
    time_average_se: &'a [f64],
}

impl<'a> From<&'a EnsembleStats> for StatsJson<'a> {
    fn from(s: &'a EnsembleStats) -> Self {
        StatsJson {
            paths_used: s.paths_used,
            aborted: s.aborted,
            times: &s.times,
            mean: &s.mean,
            se: &s.se,
            time_average_mean: &s.time_average_mean,
            time_average_se: &s.time_average_se,
        }
    }
}

fn mc(cfg: &RunConfig, scenario: &Scenario) -> Result<u8, CliError> {
    let Some(sde) = &scenario.sde else {
        unreachable!("checked before dispatch");
    };
    let dir = &cfg.output.dir;
    let requested: Vec<&str> = MC_CHECKS
        .iter()
        .copied()
        .filter(|c| cfg.checks.iter().any(|n| n == c))
        .collect();
    let names = if requested.is_empty() { MC_CHECKS.to_vec() } else { requested };

    let ctx = match CheckContext::new(scenario, cfg.seed) {
        Ok(ctx) => ctx,
        Err(e) => {
            let report = VerificationReport::aborted("mc", cfg, &e);
            output::write_json(&dir.join("ensemble.json"), &McSummary { stats: None, report: &report })
                .map_err(output_err)?;
            eprintln!("mc: {e}");
            return Ok(RunStatus::Error.exit_code());
        }
    };
    let ensemble = match euler_maruyama_paths(&ctx.dg, sde) {
        Ok(e) => e,
        Err(e) => {
            let report = VerificationReport::aborted("mc", cfg, &e);
            output::write_json(&dir.join("ensemble.json"), &McSummary { stats: None, report: &report })
                .map_err(output_err)?;
            eprintln!("mc: {e}");
            return Ok(RunStatus::Error.exit_code());
        }
    };
    let stats = ensemble_stats(&ensemble);
    let dims = scenario.mirror.dims();
    if cfg.output.wants(Format::Csv) {
        output::write_ensemble_csv(&dir.join("ensemble.csv"), &dims, &stats, cfg.output.stride).map_err(output_err)?;
    }
    if cfg.output.paths {
        output::write_paths_csv(&dir.join("paths.csv"), &dims, &ensemble, cfg.output.stride).map_err(output_err)?;
    }
    ctx.set_ensemble(ensemble);
    let records = names.iter().map(|n| run_check(&ctx, n)).collect();
    let report = VerificationReport::new("mc", cfg, records);
    output::write_json(
        &dir.join("ensemble.json"),
        &McSummary {
            stats: Some((&stats).into()),
            report: &report,
        },
    )
    .map_err(output_err)?;
    print_records(&report);
    Ok(report.status.exit_code())
}
