use clap::{Parser, Subcommand};
use ergodiff_cli::config::{parse_config_file, RunConfig, Threads};
use ergodiff_cli::pipeline;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "ergodiff", version, about = "Scaled Euler experiments for ergodic diffusions")]
struct Cli {
    /// Run configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, or "auto"
    #[arg(long, global = true)]
    threads: Option<String>,

    /// Base directory for run output (overrides [output] directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Only print warnings and the final tables
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the model hypotheses on a probe grid
    Validate,
    /// Solve the Poisson equation and export the solution
    Poisson,
    /// Estimate the asymptotic covariance by both routes and compare them
    Mf,
    /// Run the configured experiment
    Experiment,
    /// Evaluate the rate function on a piecewise-linear path
    Rate {
        /// CSV with header t,xi_1,...,xi_n
        #[arg(long)]
        knots: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    // the harness sizes its own pool; this one serves the covariance estimators
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.count().unwrap_or(0))
        .build_global()
    {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    match run(&cli, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let path = cli.config.as_deref().ok_or("--config PATH is required")?;
    let mut cfg = parse_config_file(path).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = &cli.threads {
        cfg.threads = match t.as_str() {
            "auto" => Threads::Auto,
            n => match n.parse::<usize>() {
                Ok(n) if n > 0 => Threads::Count(n),
                _ => return Err(format!("--threads expects \"auto\" or a positive integer, got '{t}'")),
            },
        };
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<bool> {
    let mut stdout = std::io::stdout().lock();
    let out: &mut dyn Write = &mut stdout;
    match &cli.command {
        Command::Validate => pipeline::cmd_validate(cfg, out),
        Command::Rate { knots } => pipeline::cmd_rate(cfg, knots, out).map(|_| true),
        Command::Mf => pipeline::cmd_mf(cfg, out).map(|c| c.passed()),
        Command::Poisson => in_run_dir(cfg, |dir| pipeline::cmd_poisson(cfg, dir, out).map(|_| true)),
        Command::Experiment => in_run_dir(cfg, |dir| {
            let report = pipeline::cmd_experiment(cfg, dir, out)?;
            writeln!(out, "artifacts in {}", dir.display())?;
            Ok(report.passed)
        }),
    }
}

fn in_run_dir(cfg: &RunConfig, job: impl FnOnce(&Path) -> anyhow::Result<bool>) -> anyhow::Result<bool> {
    let dir = pipeline::create_run_dir(&cfg.output.directory, cfg.seed)?;
    log::info!("run directory {}", dir.display());
    let result = job(&dir);
    if let Err(e) = &result {
        pipeline::mark_failed(&dir, e);
    }
    result
}
