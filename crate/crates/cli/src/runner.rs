//! Campaign batch execution, the output manifest, and aggregate CSVs.

use crate::config::{DataSource, ExperimentConfig};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use riskal_core::active::{run_campaign, CampaignConfig, ClassifierKind};
use riskal_core::data::{generate_z24_analog, load_feature_csv, MonitoringStream};
use riskal_core::decision::DecisionProcess;
use riskal_core::metrics::{aggregate_runs, AggregateResult, RunSummary};
use riskal_core::mrvm::MrvmVariant;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub classifier: ClassifierKind,
    pub run_index: usize,
    pub seed: u64,
    pub status: String,
    pub record_path: Option<String>,
    pub sha256: Option<String>,
    pub total_queries: Option<usize>,
    pub training_failures: usize,
    pub error: Option<String>,
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Summaries of successful runs, grouped by classifier in a stable
    /// order.
    pub fn summaries_by_classifier(&self) -> BTreeMap<&'static str, Vec<RunSummary>> {
        let mut grouped: BTreeMap<&'static str, Vec<RunSummary>> = BTreeMap::new();
        for entry in &self.runs {
            if let Some(summary) = &entry.summary {
                grouped
                    .entry(entry.classifier.name())
                    .or_default()
                    .push(summary.clone());
            }
        }
        grouped
    }
}

pub fn stream_for_run(config: &ExperimentConfig, run_index: usize) -> Result<MonitoringStream> {
    match &config.data {
        DataSource::Generator(generator) => {
            let mut generator = generator.clone();
            generator.seed = config.base_seed.wrapping_add(run_index as u64);
            generate_z24_analog(&generator).context("generating stream")
        }
        DataSource::Csv {
            path,
            damage_start_index,
            cold_ranges,
        } => load_feature_csv(path, *damage_start_index, cold_ranges)
            .with_context(|| format!("loading {}", path.display())),
    }
}

pub fn campaign_config(
    config: &ExperimentConfig,
    process: &DecisionProcess,
    classifier: ClassifierKind,
    run_index: usize,
) -> CampaignConfig {
    let mut train = config.train.clone();
    train.variant = match classifier {
        ClassifierKind::Mrvm1 => MrvmVariant::Constructive,
        _ => MrvmVariant::Pruning,
    };
    CampaignConfig {
        classifier_kind: classifier,
        initial_labelled_count: config.initial_labelled_count,
        initial_selection: config.initial_selection,
        decision_process: process.clone(),
        train_config: train,
        kernel: config.kernel.clone(),
        evaluate_milestones: config.evaluate_milestones,
        seed: config.base_seed.wrapping_add(run_index as u64),
    }
}

fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Runs the whole experiment; returns the manifest and whether every
/// campaign succeeded.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    renormalize: bool,
    workers: Option<usize>,
) -> Result<(Manifest, bool)> {
    config.validate()?;
    let process = config.decision_process.build(renormalize)?;
    let records_dir = out_dir.join("records");
    std::fs::create_dir_all(&records_dir)
        .with_context(|| format!("creating {}", records_dir.display()))?;

    let jobs: Vec<(ClassifierKind, usize)> = config
        .classifiers
        .iter()
        .flat_map(|c| (0..config.runs).map(move |r| (*c, r)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .context("building worker pool")?;

    let results: Vec<(ClassifierKind, usize, Result<riskal_core::active::RunRecord>)> = pool
        .install(|| {
            jobs.par_iter()
                .map(|(classifier, run_index)| {
                    let outcome = stream_for_run(config, *run_index).and_then(|stream| {
                        let campaign =
                            campaign_config(config, &process, *classifier, *run_index);
                        run_campaign(&stream, &campaign).map_err(anyhow::Error::from)
                    });
                    (*classifier, *run_index, outcome)
                })
                .collect()
        });

    let mut entries = Vec::with_capacity(results.len());
    let mut all_ok = true;
    for (classifier, run_index, outcome) in results {
        match outcome {
            Ok(record) => {
                let csv = record.to_csv();
                let file_name = format!("{}_{run_index:03}.csv", classifier.name());
                let path = records_dir.join(&file_name);
                std::fs::write(&path, csv.as_bytes())
                    .with_context(|| format!("writing {}", path.display()))?;
                let summary = RunSummary::from_record(&record);
                entries.push(RunEntry {
                    classifier,
                    run_index,
                    seed: record.seed,
                    status: "ok".to_string(),
                    record_path: Some(format!("records/{file_name}")),
                    sha256: Some(sha256_hex(csv.as_bytes())),
                    total_queries: Some(record.total_queries()),
                    training_failures: record.training_failures.len(),
                    error: None,
                    summary: Some(summary),
                });
            }
            Err(error) => {
                all_ok = false;
                entries.push(RunEntry {
                    classifier,
                    run_index,
                    seed: config.base_seed.wrapping_add(run_index as u64),
                    status: "failed".to_string(),
                    record_path: None,
                    sha256: None,
                    total_queries: None,
                    training_failures: 0,
                    error: Some(format!("{error:#}")),
                    summary: None,
                });
            }
        }
    }

    let manifest = Manifest {
        config: config.clone(),
        runs: entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, text)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok((manifest, all_ok))
}

/// Writes per-classifier aggregate CSVs:
/// `<classifier>_decision_accuracy.csv` and `<classifier>_f1.csv` with
/// `query_count,median,q25,q75` rows, `<classifier>_query_histogram.csv`
/// with `bin,count` rows, and `<classifier>_queries_per_observation.csv`
/// with `index,count,frequency` rows.
pub fn write_aggregates(manifest: &Manifest, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let grouped = manifest.summaries_by_classifier();
    if grouped.is_empty() {
        bail!("manifest has no successful runs to aggregate");
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, summaries) in grouped {
        let aggregate = aggregate_runs(&summaries);
        for (suffix, points) in [
            ("decision_accuracy", &aggregate.decision_accuracy),
            ("f1", &aggregate.f1),
        ] {
            let mut csv = String::from("query_count,median,q25,q75\n");
            for p in points {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    p.query_count, p.median, p.q25, p.q75
                ));
            }
            let path = out_dir.join(format!("{name}_{suffix}.csv"));
            std::fs::write(&path, csv)?;
            written.push(path);
        }

        let mut csv = String::from("bin,count\n");
        for (bin, count) in &aggregate.query_histogram {
            csv.push_str(&format!("{bin},{count}\n"));
        }
        let path = out_dir.join(format!("{name}_query_histogram.csv"));
        std::fs::write(&path, csv)?;
        written.push(path);

        let mut csv = String::from("index,count,frequency\n");
        for (i, (count, frequency)) in aggregate
            .per_observation_counts
            .iter()
            .zip(&aggregate.per_observation_frequency)
            .enumerate()
        {
            csv.push_str(&format!("{i},{count},{frequency}\n"));
        }
        let path = out_dir.join(format!("{name}_queries_per_observation.csv"));
        std::fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}

/// Aggregates per classifier for plotting, stable order.
pub fn aggregates_for_plots(manifest: &Manifest) -> Result<Vec<(String, AggregateResult)>> {
    let grouped = manifest.summaries_by_classifier();
    if grouped.is_empty() {
        bail!("manifest has no successful runs to plot");
    }
    Ok(grouped
        .into_iter()
        .map(|(name, summaries)| (name.to_string(), aggregate_runs(&summaries)))
        .collect())
}
