use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use link_cli::{bench, erf, train, verify, CliError, Command, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "link",
    version,
    about = "LinK large-kernel operator: verify, bench, erf, train-toy"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the equivalence, invariance and gradient suites.
    Verify(Opts),
    /// Runtime and parameter sweep over the block range.
    Bench(Opts),
    /// Effective receptive field of one encoder output voxel.
    Erf(Opts),
    /// Overfit a toy segmentation head; emits the loss trace.
    TrainToy(Opts),
}

#[derive(clap::Args)]
struct Opts {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set r=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(command: Command, opts: &Opts) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(command);
    if let Some(p) = &opts.config {
        cfg.apply_file(p)?;
    }
    for s in &opts.set {
        cfg.apply_override(s)?;
    }
    if let Some(o) = &opts.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("LINK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("LINK_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(CliError::Usage("LINK_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let (command, opts) = match &cli.command {
        Cmd::Verify(o) => (Command::Verify, o),
        Cmd::Bench(o) => (Command::Bench, o),
        Cmd::Erf(o) => (Command::Erf, o),
        Cmd::TrainToy(o) => (Command::TrainToy, o),
    };
    let cfg = build_config(command, opts)?;
    let mut out = output(&cfg)?;
    match command {
        Command::Verify => {
            verify::cmd_verify(&cfg, &mut out)?;
        }
        Command::Bench => {
            bench::cmd_bench(&cfg, &mut out)?;
        }
        Command::Erf => {
            erf::cmd_erf(&cfg, &mut out)?;
        }
        Command::TrainToy => {
            train::cmd_train_toy(&cfg, &mut out)?;
        }
    }
    out.flush().map_err(|e| CliError::io("<output>", e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("link: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
