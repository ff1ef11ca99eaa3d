use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use privpgd::data_model::{ingest_csv, load_schema_spec};
use privpgd::evaluation::{sample_queries, EvalConfig};
use privpgd::fixture::{write_fixture, FixtureSpec};
use privpgd::pipeline::{evaluate_files, synthesize, write_json, ConstraintConfig, RunConfig};
use privpgd::{Error, Result};

/// Differentially private synthetic tables by particle gradient descent.
#[derive(Parser)]
#[command(name = "privpgd", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Release a synthetic table.
    Synth(SynthArgs),
    /// Compare a synthetic table with the original.
    Evaluate(EvaluateArgs),
    /// Write a correlated test table and its schema.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON run config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// A positive number or `inf`.
    #[arg(long, value_parser = parse_epsilon)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Constraint block as inline JSON, e.g. `{"lambda": 1.0}`.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long)]
    fixed_projections: bool,
    #[arg(long)]
    mask_per_epoch: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = privpgd::evaluation::DEFAULT_QUERIES)]
    queries: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the sampled query lists as JSON.
    #[arg(long)]
    export_queries: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    /// Output directory for `data.csv` and `schema.json`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 3)]
    columns: usize,
    #[arg(long, default_value_t = 8)]
    bins: u32,
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
    #[arg(long, default_value_t = 0.6)]
    correlation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_epsilon(s: &str) -> std::result::Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().map_err(|_| format!("`{s}` is neither a number nor `inf`"))
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.input = args.input.or(config.input);
    config.schema = args.schema.or(config.schema);
    config.output = args.output.or(config.output);
    if let Some(e) = args.epsilon {
        config.epsilon = e;
    }
    if let Some(d) = args.delta {
        config.delta = d;
    }
    if let Some(m) = args.particles {
        config.particles = m;
    }
    if let Some(t) = args.epochs {
        config.engine.epochs = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(json) = &args.constraint {
        config.constraint = Some(serde_json::from_str::<ConstraintConfig>(json)?);
    }
    config.engine.fixed_projections |= args.fixed_projections;
    config.engine.mask_per_epoch |= args.mask_per_epoch;
    let out = synthesize(&config)?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    let dir = config.output.expect("validated by synthesize");
    println!("{}", dir.join("synthetic.csv").display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let config = EvalConfig {
        queries: args.queries,
        seed: args.seed,
        ..Default::default()
    };
    let report = evaluate_files(&args.original, &args.synthetic, &args.schema, &config)?;
    if let Some(path) = &args.export_queries {
        let data = ingest_csv(&args.original, &load_schema_spec(&args.schema)?)?;
        let (counting, thresholding) = sample_queries(&data, &config)?;
        let doc = serde_json::json!({ "counting": counting, "thresholding": thresholding });
        write_json(&doc, path)?;
    }
    match &args.output {
        Some(path) => write_json(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn fixture(args: FixtureArgs) -> Result<()> {
    let spec = FixtureSpec {
        columns: args.columns,
        bins: args.bins,
        rows: args.rows,
        correlation: args.correlation,
        seed: args.seed,
    };
    let (csv, schema) = write_fixture(&spec, &args.output)?;
    println!("{}\n{}", csv.display(), schema.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}
