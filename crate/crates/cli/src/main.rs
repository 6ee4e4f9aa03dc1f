//! Experiment driver for risk-based active learning campaigns.
//!
//! Subcommands: `generate` (synthetic stream to CSV), `run` (seeded
//! campaign batches with a JSON manifest), `aggregate` (median/IQR curve
//! CSVs), `plot` (static SVGs), and `demo-evpi` (one-belief EVPI report).
//!
//! Exit codes: 0 success, 1 configuration error, 2 partial run failure.

mod config;
mod plot;
mod runner;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use riskal_core::active::ClassifierKind;
use riskal_core::data::{generate_z24_analog, stream_to_labelled_csv, GeneratorConfig};
use riskal_core::decision::{
    evpi, expected_utility, meu, meu_perfect_info, should_query, Belief, DecisionProcess,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "riskal",
    about = "Risk-based active learning for monitoring decision processes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_classifier(s: &str) -> Result<ClassifierKind, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic monitoring stream CSV (features plus label).
    Generate {
        /// Generator config JSON; defaults to the built-in stream layout.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "stream.csv")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run seeded campaign batches and write records plus a manifest.
    Run {
        /// Experiment config JSON; defaults cover the desk-scale setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the number of runs per classifier.
        #[arg(long)]
        runs: Option<usize>,
        /// Overrides the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restricts the classifier list; repeatable.
        #[arg(long = "classifier", value_parser = parse_classifier)]
        classifiers: Vec<ClassifierKind>,
        /// Worker threads; defaults to available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Rescale near-valid transition rows instead of rejecting them.
        #[arg(long)]
        renormalize: bool,
    },
    /// Aggregate a manifest into per-classifier CSV curves and histograms.
    Aggregate {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the three summary SVGs from a manifest.
    Plot {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the EVPI report for one belief under the built-in process.
    DemoEvpi {
        /// Belief weights over the health states; normalized if needed.
        #[arg(num_args = 1.., required = true, allow_negative_numbers = true)]
        belief: Vec<f64>,
        /// Decision process JSON file; defaults to the built-in tables.
        #[arg(long)]
        process: Option<PathBuf>,
        /// Rescale near-valid transition rows instead of rejecting them.
        #[arg(long)]
        renormalize: bool,
    },
}

fn main() -> ExitCode {
    // Usage errors share the configuration-error exit code; help and
    // version requests stay successful.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(config, out, seed),
        Command::Run {
            config,
            out,
            runs,
            seed,
            classifiers,
            workers,
            renormalize,
        } => cmd_run(config, out, runs, seed, classifiers, workers, renormalize),
        Command::Aggregate { manifest, out } => cmd_aggregate(manifest, out),
        Command::Plot { manifest, out } => cmd_plot(manifest, out),
        Command::DemoEvpi {
            belief,
            process,
            renormalize,
        } => cmd_demo_evpi(belief, process, renormalize),
    }
}

fn cmd_generate(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<ExitCode> {
    let mut generator: GeneratorConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(seed) = seed {
        generator.seed = seed;
    }
    let stream = generate_z24_analog(&generator)?;
    std::fs::write(&out, stream_to_labelled_csv(&stream))
        .with_context(|| format!("writing {}", out.display()))?;
    let counts = stream.class_counts();
    println!(
        "wrote {} observations to {} (class counts: normal {}, cold {}, incipient {}, advanced {})",
        stream.len(),
        out.display(),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(
    config: Option<PathBuf>,
    out: PathBuf,
    runs: Option<usize>,
    seed: Option<u64>,
    classifiers: Vec<ClassifierKind>,
    workers: Option<usize>,
    renormalize: bool,
) -> Result<ExitCode> {
    let mut experiment = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(runs) = runs {
        experiment.runs = runs;
    }
    if let Some(seed) = seed {
        experiment.base_seed = seed;
    }
    if !classifiers.is_empty() {
        experiment.classifiers = classifiers;
    }
    let (manifest, all_ok) = runner::run_experiment(&experiment, &out, renormalize, workers)?;
    let ok = manifest.runs.iter().filter(|r| r.status == "ok").count();
    println!(
        "{ok}/{} campaigns succeeded; manifest at {}",
        manifest.runs.len(),
        out.join("manifest.json").display()
    );
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn cmd_aggregate(manifest_path: PathBuf, out: Option<PathBuf>) -> Result<ExitCode> {
    let manifest = runner::Manifest::load(&manifest_path)?;
    let out_dir = out.unwrap_or_else(|| default_out_dir(&manifest_path));
    let written = runner::write_aggregates(&manifest, &out_dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(manifest_path: PathBuf, out: Option<PathBuf>) -> Result<ExitCode> {
    let manifest = runner::Manifest::load(&manifest_path)?;
    let out_dir = out.unwrap_or_else(|| default_out_dir(&manifest_path));
    std::fs::create_dir_all(&out_dir)?;
    let aggregates = runner::aggregates_for_plots(&manifest)?;
    let outputs = [
        ("curves.svg", plot::curves_svg(&aggregates)),
        ("query_histogram.svg", plot::histogram_svg(&aggregates)),
        (
            "queries_per_observation.svg",
            plot::per_observation_svg(&aggregates),
        ),
    ];
    for (name, svg) in outputs {
        let path = out_dir.join(name);
        std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn default_out_dir(manifest_path: &std::path::Path) -> PathBuf {
    manifest_path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_demo_evpi(
    weights: Vec<f64>,
    process: Option<PathBuf>,
    renormalize: bool,
) -> Result<ExitCode> {
    let dp = match process {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            DecisionProcess::from_json(&text, renormalize)?
        }
        None => DecisionProcess::z24_default(),
    };
    if weights.len() != dp.class_count() {
        bail!(
            "belief needs {} entries for this process, got {}",
            dp.class_count(),
            weights.len()
        );
    }
    let belief = Belief::from_weights(weights)?;
    println!(
        "belief: [{}]",
        belief
            .probs()
            .iter()
            .map(|p| format!("{p:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    for action in dp.actions() {
        let eu = expected_utility(&belief, action, &dp)?;
        println!("EU({action}) = {eu:.6}");
    }
    let (best, value) = meu(&belief, &dp)?;
    println!("MEU = {value:.6} ({best})");
    let perfect = meu_perfect_info(&belief, &dp)?;
    println!("MEU with perfect information = {perfect:.6}");
    let evpi_value = evpi(&belief, &dp)?;
    println!("EVPI = {evpi_value:.6}");
    println!("inspection cost = {}", dp.inspection_cost());
    if should_query(evpi_value, &dp) {
        println!("verdict: QUERY (EVPI exceeds the inspection cost)");
    } else {
        println!("verdict: NO QUERY (EVPI does not exceed the inspection cost)");
    }
    Ok(ExitCode::SUCCESS)
}
