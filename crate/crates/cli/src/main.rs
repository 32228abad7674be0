use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use foldcore_cli::commands;
use foldcore_cli::{CliError, Report, RunConfig};

#[derive(Parser)]
#[command(name = "foldcore", version, about = "Fixed-point folding diagnostics and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward/backward error per iteration for unrolled and folded differentiation
    Converge(Flags),
    /// Spectral radius of the step Jacobian and backward statistics per stepsize
    Spectral(Flags),
    /// Backward engines against finite differences and each other
    Gradcheck(Flags),
    /// Decision-focused training, optionally against a two-stage baseline
    Train(Flags),
    /// Unrolled PGD under Polyak's stepsize next to a constant stepsize
    Polyak(Flags),
}

/// Every flag mirrors a config-file key and overrides it.
#[derive(Args)]
struct Flags {
    /// key=value configuration file ('#' starts a comment)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// lfpi, gmres, jacobian or unrolled
    #[arg(long)]
    mode: Option<String>,
    /// A positive number or `polyak`
    #[arg(long, alias = "alpha")]
    stepsize: Option<String>,
    /// Comma-separated stepsizes
    #[arg(long)]
    alpha_sweep: Option<String>,
    /// Random starts averaged in unrolled traces
    #[arg(long)]
    starts: Option<String>,
    #[arg(long)]
    fwd_tol: Option<String>,
    #[arg(long)]
    bwd_tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    /// Unrolled iterations per trace
    #[arg(long)]
    iters: Option<String>,
    /// Defaults to FOLDCORE_SEED, then 0
    #[arg(long)]
    seed: Option<String>,
    /// CSV output path (stdout when absent)
    #[arg(long, short)]
    output: Option<String>,
    /// JSON summary path
    #[arg(long)]
    json: Option<String>,
    /// CSV of (c, x*) rows serving as the forward solver
    #[arg(long)]
    oracle_file: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    length: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    degree: Option<String>,
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    /// linear or twolayer
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    /// none or two-stage
    #[arg(long)]
    baseline: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&'static str, &Option<String>); 31] = [
            ("task", &self.task),
            ("method", &self.method),
            ("mode", &self.mode),
            ("stepsize", &self.stepsize),
            ("alpha_sweep", &self.alpha_sweep),
            ("starts", &self.starts),
            ("fwd_tol", &self.fwd_tol),
            ("bwd_tol", &self.bwd_tol),
            ("max_iter", &self.max_iter),
            ("iters", &self.iters),
            ("seed", &self.seed),
            ("output", &self.output),
            ("json", &self.json),
            ("oracle_file", &self.oracle_file),
            ("n", &self.n),
            ("k", &self.k),
            ("m", &self.m),
            ("length", &self.length),
            ("samples", &self.samples),
            ("noise", &self.noise),
            ("lambda", &self.lambda),
            ("degree", &self.degree),
            ("spec", &self.spec),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("optimizer", &self.optimizer),
            ("predictor", &self.predictor),
            ("hidden", &self.hidden),
            ("activation", &self.activation),
            ("baseline", &self.baseline),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .collect()
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn emit(cfg: &RunConfig, report: &Report) -> Result<(), CliError> {
    match &cfg.output {
        Some(path) => {
            std::fs::write(path, &report.csv)?;
            for (suffix, body) in &report.extra {
                std::fs::write(sibling(path, suffix), body)?;
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            let mut write = || -> std::io::Result<()> {
                out.write_all(report.csv.as_bytes())?;
                for (suffix, body) in &report.extra {
                    writeln!(out, "# {suffix}")?;
                    out.write_all(body.as_bytes())?;
                }
                out.flush()
            };
            match write() {
                // a closed reader (e.g. `| head`) is not an error
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    if let Some(path) = &cfg.json {
        let text = serde_json::to_string_pretty(&report.summary).expect("summary is serializable");
        std::fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn run(command: Command) -> Result<Option<String>, CliError> {
    let (flags, exec): (Flags, fn(&RunConfig) -> Result<Report, CliError>) = match command {
        Command::Converge(f) => (f, commands::converge),
        Command::Spectral(f) => (f, commands::spectral),
        Command::Gradcheck(f) => (f, commands::gradcheck),
        Command::Train(f) => (f, commands::train),
        Command::Polyak(f) => (f, commands::polyak),
    };
    let file_text = match &flags.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let env_seed = std::env::var("FOLDCORE_SEED").ok();
    let cfg = RunConfig::resolve(env_seed.as_deref(), file_text.as_deref(), flags.overrides())?;
    let report = exec(&cfg)?;
    emit(&cfg, &report)?;
    Ok(report.failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("foldcore: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("foldcore: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
