use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dramanet::config::{AdapterMode, PipelineConfig};
use dramanet::orchestration::OrderingMode;
use dramanet::pipeline;

/// Persona-model script generation driven by a simulated dramatic network.
///
/// Any config field can be overridden as `--set section.key=value` or
/// directly as `--section.key value`.
#[derive(Debug, Parser)]
#[command(name = "dramanet", version)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root RNG seed (`dn.rng_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Speaker ordering for `generate`.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<OrderingMode>,
    #[arg(long, global = true, value_enum)]
    adapter: Option<AdapterMode>,
    /// Base URL of the model server for `--adapter http`.
    #[arg(long, global = true, env = "DRAMANET_MODEL_URL")]
    model_url: Option<String>,
    /// Output directory (`paths.output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assign every corpus character to a sentiment cluster.
    Cluster,
    /// Write one training file per cluster.
    Preprocess,
    /// Simulate speaker schedules only.
    Simulate,
    /// Generate scripts with the configured ordering mode.
    Generate,
    /// Compute metrics over the scripts dir.
    Evaluate,
    /// Print the effective configuration.
    ShowConfig,
}

fn parse_mode(s: &str) -> Result<OrderingMode, String> {
    s.parse()
}

/// Rewrites `--a.b=v` and `--a.b v` into `--set a.b=v`.
fn expand_dotted(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|rest| rest.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(rest) if rest.contains('=') => {
                out.push("--set".into());
                out.push(rest.to_string());
            }
            Some(rest) => {
                out.push("--set".into());
                out.push(format!("{rest}={}", it.next().unwrap_or_default()));
            }
            None => out.push(arg),
        }
    }
    out
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, dramanet::Error> {
    let mut overrides = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| dramanet::Error::config(format!("override `{o}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.to_string()));
    }
    // Dedicated flags win over --set.
    let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
    if let Some(seed) = cli.seed {
        overrides.push(("dn.rng_seed".into(), seed.to_string()));
    }
    if let Some(mode) = cli.mode {
        overrides.push(("generate.mode".into(), quote(mode.as_str())));
    }
    if let Some(a) = cli.adapter {
        let name = match a {
            AdapterMode::Stub => "stub",
            AdapterMode::Fixture => "fixture",
            AdapterMode::Http => "http",
        };
        overrides.push(("adapter.mode".into(), quote(name)));
    }
    if let Some(url) = &cli.model_url {
        overrides.push(("adapter.base_url".into(), quote(url)));
    }
    if let Some(out) = &cli.out {
        overrides.push(("paths.output_dir".into(), quote(&out.to_string_lossy())));
    }
    PipelineConfig::load(cli.config.as_deref(), &overrides)
}

fn run(cli: &Cli) -> Result<String, dramanet::Error> {
    let config = load_config(cli)?;
    log::debug!("effective config:\n{}", config.to_toml());
    match cli.command {
        Command::Cluster => pipeline::cmd_cluster(&config),
        Command::Preprocess => pipeline::cmd_preprocess(&config),
        Command::Simulate => pipeline::cmd_simulate(&config).map(|(_, msg)| msg),
        Command::Generate => pipeline::cmd_generate(&config),
        Command::Evaluate => pipeline::cmd_evaluate(&config).map(|(_, summary)| summary),
        Command::ShowConfig => Ok(config.to_toml()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse_from(expand_dotted(std::env::args())) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(msg) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(std::io::stdout(), "{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
