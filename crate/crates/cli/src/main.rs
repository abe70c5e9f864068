use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use cbo_core::harness::{resolve_out_dir, run_and_write, ExperimentConfig, ExperimentId, Method, OUT_DIR_ENV};
use cbo_core::mnist::read_headers;
use cbo_core::verify::{render_table, run_suites, Suite};
use cbo_core::Error;
use clap::{Args, Parser, Subcommand};

const SCHEMA_HINT: &str = "see configs/SCHEMA.md for the config file schema, or start from a preset with --experiment";

#[derive(Parser)]
#[command(name = "cbo", version, about = "Consensus-based optimization experiments and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write per-run and aggregate CSVs.
    Run(RunArgs),
    /// Run the numerical self-check suites and print a pass/fail table.
    Verify(VerifyArgs),
    /// Validate a pair of MNIST IDX files and print their headers.
    MnistCheck(MnistArgs),
    /// List the experiment ids and the methods each accepts.
    ListExperiments,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the preset of this experiment (sine, mnist, multitask, square_ot).
    #[arg(long)]
    experiment: Option<String>,
    /// Method to train; defaults to the experiment's first method.
    #[arg(long)]
    method: Option<String>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Run seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    /// Output directory (default: the config's out_dir, then $CBO_OUT_DIR, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted key=value overrides, e.g. `cbo.alpha=1e4` or `seeds=[1, 2]`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite to run (repeatable): gradient, w2, barycenter, prop1, prop3, consensus. Default: all.
    #[arg(long = "suite")]
    suites: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MnistArgs {
    #[arg(long, default_value = "data/mnist/train-images-idx3-ubyte")]
    images: PathBuf,
    #[arg(long, default_value = "data/mnist/train-labels-idx1-ubyte")]
    labels: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&args.config, &args.experiment) {
        (Some(path), _) => ExperimentConfig::load(path)
            .map_err(|e| match e {
                Error::Io { .. } => Failure::Usage(anyhow!("{e}; {SCHEMA_HINT}")),
                other => other.into(),
            })?,
        (None, Some(name)) => {
            let experiment = ExperimentId::parse(name)?;
            let method = match &args.method {
                Some(m) => Method::parse(m)?,
                None => experiment.methods()[0],
            };
            ExperimentConfig::preset(experiment, method)?
        }
        (None, None) => return Err(Failure::Usage(anyhow!("run needs --config or --experiment; {SCHEMA_HINT}"))),
    };
    if let (Some(m), Some(_)) = (&args.method, &args.config) {
        cfg = cfg.with_override(&format!("method=\"{m}\""))?;
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_override(&format!("seeds=[{seed}]"))?;
    }
    if let Some(n) = args.seeds {
        let list: Vec<String> = (0..n).map(|s| s.to_string()).collect();
        cfg = cfg.with_override(&format!("seeds=[{}]", list.join(", ")))?;
    }
    if let Some(e) = args.epochs {
        cfg = cfg.with_override(&format!("epochs={e}"))?;
    }
    for o in &args.overrides {
        cfg = cfg.with_override(o)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args)?;
    let dir = resolve_out_dir(&cfg);
    println!("# resolved config (hash {})", cfg.hash());
    print!("{}", cfg.to_toml_string());
    println!("# output directory: {}", dir.display());
    let outputs = run_and_write(&cfg, &dir)?;
    for (record, path) in outputs.records.iter().zip(&outputs.run_files) {
        let last = record.final_row().map(|r| r.values.clone()).unwrap_or_default();
        let status = if record.is_completed() { "completed".to_string() } else { format!("{:?}", record.status) };
        println!(
            "seed {:>4}: {status}, final {} = {:?} -> {}",
            record.seed,
            record.metrics.join("/"),
            last,
            path.display()
        );
    }
    match outputs.plot_file {
        Some(p) => println!("aggregate -> {}", p.display()),
        None => return Err(Failure::Runtime(anyhow!("no seed completed; nothing to aggregate"))),
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<bool, Failure> {
    let suites = if args.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suites.iter().map(|s| Suite::parse(s)).collect::<Result<_, _>>()?
    };
    let outcomes = run_suites(&suites, args.seed)?;
    print!("{}", render_table(&outcomes));
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("{} checks, {failed} failed", outcomes.len());
    Ok(failed == 0)
}

fn mnist_check(args: MnistArgs) -> Result<(), Failure> {
    let (images, labels) = read_headers(&args.images, &args.labels)
        .with_context(|| format!("checking {} and {}", args.images.display(), args.labels.display()))
        .map_err(Failure::Runtime)?;
    println!("images: {} ({} x {} x {})", args.images.display(), images.count, images.rows, images.cols);
    println!("labels: {} ({})", args.labels.display(), labels.count);
    if images.count != labels.count {
        return Err(Failure::Runtime(anyhow!("{} images but {} labels", images.count, labels.count)));
    }
    println!("ok");
    Ok(())
}

fn list_experiments() {
    for e in ExperimentId::ALL {
        let methods: Vec<&str> = e.methods().iter().map(|m| m.name()).collect();
        println!("{:<10} {:<28} {}", e.name(), methods.join(","), e.description());
    }
    println!("(default output directory: ${OUT_DIR_ENV}, else ./runs)");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::MnistCheck(a) => mnist_check(a).map(|_| true),
        Command::ListExperiments => {
            list_experiments();
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
