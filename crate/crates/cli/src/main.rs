//! `kam`: configuration-driven front end for the KAM workbench.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{RunContext, EXIT_USAGE};
use config::{Mode, RunConfig};

#[derive(Parser)]
#[command(name = "kam", version, about = "Multiscale KAM iteration and torus-persistence workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the mode named in the config.
    Run(Common),
    /// Check scale parameters without running.
    Validate(Common),
    /// Monte Carlo estimate of the excluded parameter fraction.
    Measure(Common),
    /// Integrate an oscillator chain.
    Simulate(Common),
    /// Extract frequencies from a trajectory or inline signal.
    Freqs(Common),
    /// Torus-persistence scan over actions and ε.
    Scan(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config, then `.`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("KAM_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn resolve_mode(cfg: &RunConfig, forced: Option<Mode>) -> Result<Mode> {
    match (forced, cfg.mode) {
        (None, Some(m)) => Ok(m),
        (None, None) => bail!("config has no `mode`; `kam run` needs one"),
        (Some(f), Some(m)) if f != m => {
            bail!("config `mode` is {} but the subcommand asks for {}", commands::mode_name(m), commands::mode_name(f))
        }
        (Some(f), _) => Ok(f),
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn execute(cmd: Cmd) -> Result<i32> {
    let (args, forced) = match cmd {
        Cmd::Validate(a) => {
            let (cfg, _) = RunConfig::load(&a.config)?;
            let diag = commands::validate(&cfg);
            println!("{}", serde_json::to_string_pretty(&diag)?);
            return Ok(if diag["valid"] == json!(true) { 0 } else { EXIT_USAGE });
        }
        Cmd::Run(a) => (a, None),
        Cmd::Measure(a) => (a, Some(Mode::Measure)),
        Cmd::Simulate(a) => (a, Some(Mode::Simulate)),
        Cmd::Freqs(a) => (a, Some(Mode::Freqs)),
        Cmd::Scan(a) => (a, Some(Mode::Scan)),
    };
    let (cfg, echo) = RunConfig::load(&args.config)?;
    let mode = resolve_mode(&cfg, forced)?;
    if let Some(n) = args.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().and_then(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let report_name = cfg.output.as_ref().and_then(|o| o.report.clone()).unwrap_or_else(|| "report.json".into());
    let mut names = commands::artifacts(&cfg, mode);
    names.push(report_name.clone());
    commands::check_writable(&out_dir, &names)?;

    let ctx = RunContext { config_dir: config_dir(&args.config), out_dir: out_dir.clone(), seed: args.seed.or(cfg.seed).unwrap_or(0) };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let outcome = commands::dispatch(&cfg, mode, &ctx)?;
    let report = json!({
        "mode": commands::mode_name(mode),
        "exit_code": outcome.code,
        "seed": ctx.seed,
        "config": echo,
        "versions": { "kam-cli": env!("CARGO_PKG_VERSION"), "kam-core": kam_core::VERSION },
        "timing": { "started_unix": started, "wall_time_s": clock.elapsed().as_secs_f64() },
        "result": outcome.result,
    });
    let path = out_dir.join(&report_name);
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", path.display());
    Ok(outcome.code)
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match execute(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
