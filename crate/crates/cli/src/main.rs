use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medkit_core::report::{
    emit, load_inputs, run_pipeline, validate_inputs, OutputFormat, PipelineConfig, Stage,
};
use medkit_core::synth::generate;
use medkit_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "medkit",
    version,
    about = "Measure, explain and diagnose checkpoint evaluation records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check records for structural errors
    Validate(Common),
    /// Drift curves, area metrics and schema gap
    Measure(Common),
    /// Four-term gain/harm decomposition
    Explain(Common),
    /// Mass/policy/quality factors and cohort quality
    Diagnose(Common),
    /// Cross-benchmark curves and bootstrap intervals
    Aggregate(Common),
    /// Generate synthetic records from the config's [[synth]] entries
    Synth(Common),
    /// Full pipeline
    Report(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML pipeline configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record file (JSON lines); repeatable, replaces the config's inputs
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides MEDKIT_SEED and the config
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    format: Option<OutputFormat>,
}

enum Failure {
    Validation(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Validation(_) => Failure::Validation(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn load_config(args: &Common) -> Result<PipelineConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if !args.inputs.is_empty() {
        config.inputs = args.inputs.clone();
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(format) = args.format {
        config.format = format;
    }
    let env_seed = match std::env::var("MEDKIT_SEED") {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| Failure::Usage(format!("MEDKIT_SEED is not a u64: {v:?}")))?,
        ),
        Err(_) => None,
    };
    if let Some(seed) = args.seed.or(env_seed) {
        config.override_seed(seed);
    }
    Ok(config)
}

fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<(), Failure> {
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Failure::Usage("no output directory (use --out or out_dir)".into()))?;
    let bundle = run_pipeline(config)?.select(stage);
    for notice in &bundle.notices {
        eprintln!("notice: {notice}");
    }
    let files = emit(&bundle, config.format, &out)?;
    eprintln!("wrote {} file(s) to {}", files.len(), out.display());
    Ok(())
}

fn run_validate(config: &PipelineConfig) -> Result<(), Failure> {
    if config.inputs.is_empty() {
        return Err(Failure::Usage("no input paths given".into()));
    }
    let loaded = load_inputs(&config.inputs)?;
    let report = validate_inputs(&loaded.records, config)?;
    println!(
        "{} record(s) in {} file(s)",
        loaded.records.len(),
        loaded.digests.len()
    );
    print!("{report}");
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "{} validation error(s)",
            report.errors.len()
        )))
    }
}

fn run_synth(config: &PipelineConfig) -> Result<(), Failure> {
    if config.synth.is_empty() {
        return Err(Failure::Usage("config has no [[synth]] entries".into()));
    }
    let mut text = String::new();
    for spec in &config.synth {
        for r in generate(spec)? {
            text.push_str(&r.to_json_line());
            text.push('\n');
        }
    }
    match &config.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
            let path = dir.join("records.jsonl");
            std::fs::write(&path, text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Usage(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, stage) = match &cli.command {
        Command::Validate(a) => (a, None),
        Command::Synth(a) => (a, None),
        Command::Measure(a) => (a, Some(Stage::Measure)),
        Command::Explain(a) => (a, Some(Stage::Explain)),
        Command::Diagnose(a) => (a, Some(Stage::Diagnose)),
        Command::Aggregate(a) => (a, Some(Stage::Aggregate)),
        Command::Report(a) => (a, Some(Stage::Report)),
    };
    let result = load_config(args).and_then(|config| match (&cli.command, stage) {
        (Command::Validate(_), _) => run_validate(&config),
        (Command::Synth(_), _) => run_synth(&config),
        (_, Some(stage)) => run_stage(&config, stage),
        _ => unreachable!("every subcommand is dispatched"),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
