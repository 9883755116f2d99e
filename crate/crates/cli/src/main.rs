//! `tangentlab` experiment harness. One subcommand per experiment; each run
//! writes CSV tables, the resolved config and a metadata file.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod config;
mod experiments;
mod output;

use config::{Command, ExperimentConfig, Overrides};
use output::{blob_hash, OutDir, Summary};

const EXIT_CODES: &str =
    "Exit status: 0 success, 1 other failure (I/O), 2 invalid configuration or input, \
3 numerical divergence. Failed runs leave no files behind.";

#[derive(Parser)]
#[command(
    name = "tangentlab",
    version,
    about = "Kernel, linearization and training experiments for wide fully-connected networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON experiment config; omitted fields take the subcommand defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to TANGENTLAB_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Sub {
    /// Monte Carlo NNGP and tangent kernels against the analytic kernels over a width ladder.
    KernelConvergence(RunArgs),
    /// Weight, parameter and kernel drift during training over a width ladder.
    DriftSweep(RunArgs),
    /// Network training against its linearization and the closed-form dynamics.
    TrainCompare(RunArgs),
    /// Final network-vs-linearization error over widths, depths and dataset sizes.
    ErrorVsWidth(RunArgs),
    /// Ensemble of trained networks on an interpolation line against the predicted output distribution.
    PredictiveDistribution(RunArgs),
    /// Output distribution of readout-only training and the NNGP posterior.
    ReadoutGp(RunArgs),
    /// Discrete linearized cross-entropy training against the integrated flow.
    XentCompare(RunArgs),
    /// Discrete linearized momentum training against its second-order flow.
    MomentumCompare(RunArgs),
    /// Dump the analytic NNGP and tangent kernels of the configured inputs.
    Kernels(RunArgs),
}

impl Sub {
    fn split(self) -> (Command, RunArgs) {
        match self {
            Sub::KernelConvergence(a) => (Command::KernelConvergence, a),
            Sub::DriftSweep(a) => (Command::DriftSweep, a),
            Sub::TrainCompare(a) => (Command::TrainCompare, a),
            Sub::ErrorVsWidth(a) => (Command::ErrorVsWidth, a),
            Sub::PredictiveDistribution(a) => (Command::PredictiveDistribution, a),
            Sub::ReadoutGp(a) => (Command::ReadoutGp, a),
            Sub::XentCompare(a) => (Command::XentCompare, a),
            Sub::MomentumCompare(a) => (Command::MomentumCompare, a),
            Sub::Kernels(a) => (Command::Kernels, a),
        }
    }
}

const ALL: [Command; 9] = [
    Command::KernelConvergence,
    Command::DriftSweep,
    Command::TrainCompare,
    Command::ErrorVsWidth,
    Command::PredictiveDistribution,
    Command::ReadoutGp,
    Command::XentCompare,
    Command::MomentumCompare,
    Command::Kernels,
];

fn schema_help(cmd: Command) -> String {
    let mut s = String::from("Output files (CSV headers; `…` continues per layer):\n");
    for (file, header) in experiments::schema(cmd) {
        s.push_str(&format!("  {file}: {header}\n"));
    }
    s.push_str("  config.resolved.json: the full config of the run\n");
    s.push_str("  metadata.json: command, seed, architecture, optimizer, config hash, summary statistics\n\n");
    s.push_str(EXIT_CODES);
    s
}

fn cli() -> clap::Command {
    let mut c = Cli::command().after_help(EXIT_CODES);
    for cmd in ALL {
        c = c.mut_subcommand(cmd.name(), |s| s.after_help(schema_help(cmd)));
    }
    c
}

#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Diverged(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn classify(e: anyhow::Error) -> Failure {
        use tangentlab::Error as E;
        for cause in e.chain() {
            if let Some(t) = cause.downcast_ref::<E>() {
                return match t {
                    E::Divergence { .. }
                    | E::Stiffness { .. }
                    | E::NotPsd { .. }
                    | E::DegenerateKernel(_)
                    | E::SpectrumDomain { .. } => Failure::Diverged(e),
                    E::Io(_) => Failure::Other(e),
                    _ => Failure::Invalid(e),
                };
            }
            if cause.downcast_ref::<std::io::Error>().is_some() {
                return Failure::Other(e);
            }
        }
        Failure::Invalid(e)
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Diverged(e) | Failure::Other(e) => e,
        }
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("TANGENTLAB_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Failure::Invalid(anyhow::anyhow!(
                "TANGENTLAB_THREADS must be a positive integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn execute(cmd: Command, args: RunArgs) -> Result<(), Failure> {
    let file = match &args.config {
        Some(p) => Some(ExperimentConfig::read(p).map_err(Failure::Invalid)?),
        None => None,
    };
    let cfg = ExperimentConfig::resolve(cmd, file, &args.overrides).map_err(Failure::Invalid)?;
    let resolved = cfg.resolved_copy();
    if args.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&resolved).expect("serializable")
        );
        return Ok(());
    }
    if let Some(n) = threads(args.threads)? {
        if n == 0 {
            return Err(Failure::Invalid(anyhow::anyhow!(
                "thread count must be positive"
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Other(e.into()))?;
    }
    let target = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("out/{}", cmd.name())));
    let mut out = OutDir::create(&target).map_err(Failure::Other)?;
    let config_bytes = out
        .json("config.resolved.json", &resolved)
        .map_err(Failure::Other)?;
    let mut summary = Summary::default();
    let started = Instant::now();
    experiments::run(
        cmd,
        experiments::Run {
            cfg: &cfg,
            out: &mut out,
            summary: &mut summary,
        },
    )
    .map_err(Failure::classify)?;
    let elapsed = started.elapsed().as_secs_f64();
    let mut files = out.files().to_vec();
    files.push("metadata.json".into());
    let meta = serde_json::json!({
        "command": cmd.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_hash": blob_hash(&config_bytes),
        "architecture": cfg.architecture,
        "optimizer": cfg.optimizer,
        "files": files,
        "results": summary.0,
    });
    out.json("metadata.json", &meta).map_err(Failure::Other)?;
    out.commit().map_err(Failure::Other)?;
    eprintln!(
        "{}: wrote {} in {elapsed:.1}s",
        cmd.name(),
        target.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let parsed = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (cmd, args) = parsed.command.split();
    match execute(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
