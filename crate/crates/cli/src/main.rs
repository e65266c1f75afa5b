use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softdedup::pipeline::{parse_value, Pipeline, PipelineConfig, Stage};
use softdedup::sampler::ExportFormat;
use softdedup::{Error, ErrorClass};

/// Commonness-based soft deduplication of text corpora.
#[derive(Parser, Debug)]
#[command(name = "softdedup", version)]
struct Cli {
    /// Flat TOML file of pipeline settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Settings {
    /// Training corpus file (JSONL); repeatable.
    #[arg(long = "input", global = true)]
    inputs: Vec<PathBuf>,
    /// Held-out corpus file for decontamination; repeatable.
    #[arg(long = "test-input", global = true)]
    test_inputs: Vec<PathBuf>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    segments: Option<usize>,
    #[arg(long, global = true, conflicts_with = "target_ratio")]
    exponent: Option<f64>,
    #[arg(long, global = true)]
    target_ratio: Option<f64>,
    #[arg(long = "budget", global = true)]
    token_budget: Option<u64>,
    /// `id-list` or `text`.
    #[arg(long = "format", global = true)]
    export_format: Option<ExportFormat>,
    #[arg(long = "threshold", global = true)]
    contamination_threshold: Option<usize>,
    /// Any config key, e.g. `--set lsh_bands=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_assignment)]
    overrides: Vec<(String, String)>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Build the vocabulary and train the n-gram model.
    TrainLm,
    /// Score every document's commonness.
    Score,
    /// Split documents into commonness segments and weight them.
    Partition,
    /// Draw a weighted sample and export it.
    Sample,
    /// MinHash-LSH hard deduplication baseline.
    Harddedup,
    /// Remove training documents that overlap the held-out set.
    Decontaminate,
    /// Corpus statistics.
    Stats,
    /// Summary of the artifacts in the output directory.
    Report,
    /// Every enabled stage in order.
    Run,
    /// Print the resolved configuration as TOML.
    Config,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_owned(), v.to_owned())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

fn resolve(cli: &Cli) -> softdedup::Result<PipelineConfig> {
    let overrides = cli
        .settings
        .overrides
        .iter()
        .map(|(k, v)| (k.clone(), parse_value(v)))
        .collect();
    let mut c = PipelineConfig::resolve(cli.config.as_deref(), overrides)?;
    let s = &cli.settings;
    if !s.inputs.is_empty() {
        c.inputs = s.inputs.clone();
    }
    if !s.test_inputs.is_empty() {
        c.test_inputs = s.test_inputs.clone();
    }
    if let Some(v) = s.order {
        c.order = v;
    }
    if let Some(v) = s.segments {
        c.segments = v;
    }
    // either flag replaces whichever of the two the file set
    if let Some(v) = s.exponent {
        c.exponent = Some(v);
        c.target_ratio = None;
    }
    if let Some(v) = s.target_ratio {
        c.target_ratio = Some(v);
        c.exponent = None;
    }
    if let Some(v) = s.token_budget {
        c.token_budget = Some(v);
    }
    if let Some(v) = s.export_format {
        c.export_format = v;
    }
    if let Some(v) = s.contamination_threshold {
        c.contamination_threshold = v;
    }
    if let Some(v) = cli.workers {
        c.workers = Some(v);
    }
    if let Some(v) = cli.seed {
        c.seed = v;
    }
    if let Some(v) = &cli.out_dir {
        c.out_dir = v.clone();
    }
    c.validate()?;
    Ok(c)
}

fn execute(cli: &Cli) -> softdedup::Result<()> {
    let config = resolve(cli)?;
    if let Command::Config = cli.command {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let pipeline = Pipeline::new(config)?;
    log::info!("config digest {}", pipeline.digest());
    let stage = match cli.command {
        Command::TrainLm => Stage::TrainLm,
        Command::Score => Stage::Score,
        Command::Partition => Stage::Partition,
        Command::Sample => Stage::Sample,
        Command::Harddedup => Stage::Harddedup,
        Command::Decontaminate => Stage::Decontaminate,
        Command::Stats => Stage::Stats,
        Command::Report => {
            pipeline.run_stage(Stage::Report)?;
            let text = std::fs::read_to_string(pipeline.artifacts().report_text())
                .map_err(|e| Error::io(pipeline.artifacts().report_text(), e))?;
            print!("{text}");
            return Ok(());
        }
        Command::Run => {
            pipeline.run()?;
            eprintln!("artifacts written to {}", pipeline.artifacts().dir().display());
            return Ok(());
        }
        Command::Config => unreachable!(),
    };
    pipeline.run_stage(stage)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Internal => 3,
            })
        }
    }
}
