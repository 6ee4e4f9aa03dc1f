//! Monitoring streams: a synthetic four-class generator echoing the shape
//! of a bridge-monitoring campaign (normal operation, a cold-stiffening
//! block with raised natural frequencies, then incremental damage lowering
//! them), and a CSV loader for real pre-extracted feature histories.
//!
//! Labels follow the index rule throughout: the damaged tail of the stream
//! splits into halves (incipient damage first, advanced damage second, the
//! odd row going to incipient), cold index ranges are class 2, everything
//! else class 1.

use crate::decision::HealthState;
use crate::kernel::FeatureMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const CLASS_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty stream")]
    Empty,
}

/// Ordered observations with hidden ground-truth labels. The labels are
/// the query oracle: the harness reveals one only when an inspection is
/// paid for.
#[derive(Debug, Clone)]
pub struct MonitoringStream {
    features: FeatureMatrix,
    labels: Vec<HealthState>,
}

impl MonitoringStream {
    pub fn new(features: FeatureMatrix, labels: Vec<HealthState>) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::InvalidConfig(format!(
                "{} rows with {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(MonitoringStream { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn observation(&self, t: usize) -> Vec<f64> {
        self.features.row(t)
    }

    /// Ground truth for observation `t`: only the querying harness and the
    /// evaluation oracle may look.
    pub fn true_label(&self, t: usize) -> HealthState {
        self.labels[t]
    }

    pub fn labels(&self) -> &[HealthState] {
        &self.labels
    }

    pub fn class_counts(&self) -> [usize; CLASS_COUNT] {
        let mut counts = [0usize; CLASS_COUNT];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }
}

/// Synthetic stream layout and per-class Gaussian parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub total_count: usize,
    /// Fraction of the stream before damage onset.
    pub damage_start_fraction: f64,
    /// Cold block as (start, end) fractions, end exclusive, inside the
    /// undamaged span.
    pub cold_block: (f64, f64),
    /// Per-class mean vectors, `CLASS_COUNT x D` (natural frequencies, Hz).
    pub class_means: Vec<Vec<f64>>,
    /// Per-class per-dimension standard deviations, `CLASS_COUNT x D`.
    pub class_sigmas: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let sigma = 0.06;
        let cold_sigma = sigma * std::f64::consts::SQRT_2;
        GeneratorConfig {
            total_count: 1000,
            damage_start_fraction: 0.884,
            cold_block: (0.30, 0.38),
            class_means: vec![
                vec![3.9, 5.0, 9.8, 10.3],
                vec![4.2, 5.3, 10.1, 10.6],
                vec![3.8, 4.9, 9.7, 10.2],
                vec![3.7, 4.8, 9.6, 10.1],
            ],
            class_sigmas: vec![
                vec![sigma; 4],
                vec![cold_sigma; 4],
                vec![sigma; 4],
                vec![sigma; 4],
            ],
            seed: 0,
        }
    }
}

/// Index layout derived from a [`GeneratorConfig`] by floor arithmetic:
/// `damage_start = floor(total * damage_start_fraction)`, cold block
/// `[floor(total * start), floor(total * end))`, damaged tail split into
/// halves with the odd row going to the incipient class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamLayout {
    pub total_count: usize,
    pub cold_start: usize,
    pub cold_end: usize,
    pub damage_start: usize,
    pub class_counts: [usize; CLASS_COUNT],
}

impl GeneratorConfig {
    pub fn layout(&self) -> Result<StreamLayout, DataError> {
        if self.total_count == 0 {
            return Err(DataError::InvalidConfig("total_count must be > 0".into()));
        }
        if !(self.damage_start_fraction > 0.0 && self.damage_start_fraction < 1.0) {
            return Err(DataError::InvalidConfig(
                "damage_start_fraction must lie in (0, 1)".into(),
            ));
        }
        let (cold_lo, cold_hi) = self.cold_block;
        if !(0.0 <= cold_lo && cold_lo < cold_hi && cold_hi <= self.damage_start_fraction) {
            return Err(DataError::InvalidConfig(
                "cold block must be a non-empty range inside the undamaged span".into(),
            ));
        }
        let total = self.total_count;
        let damage_start = (total as f64 * self.damage_start_fraction).floor() as usize;
        let cold_start = (total as f64 * cold_lo).floor() as usize;
        let cold_end = (total as f64 * cold_hi).floor() as usize;
        let tail = total - damage_start;
        let incipient = tail - tail / 2;
        let advanced = tail / 2;
        let cold = cold_end - cold_start;
        let normal = damage_start - cold;
        let class_counts = [normal, cold, incipient, advanced];
        if class_counts.iter().any(|c| *c == 0) {
            return Err(DataError::InvalidConfig(format!(
                "every class needs at least one observation, got {class_counts:?}"
            )));
        }
        Ok(StreamLayout {
            total_count: total,
            cold_start,
            cold_end,
            damage_start,
            class_counts,
        })
    }

    fn validate_parameters(&self) -> Result<usize, DataError> {
        if self.class_means.len() != CLASS_COUNT || self.class_sigmas.len() != CLASS_COUNT {
            return Err(DataError::InvalidConfig(format!(
                "class_means and class_sigmas must each have {CLASS_COUNT} rows"
            )));
        }
        let dim = self.class_means[0].len();
        if dim == 0 {
            return Err(DataError::InvalidConfig("zero-dimensional means".into()));
        }
        for k in 0..CLASS_COUNT {
            if self.class_means[k].len() != dim || self.class_sigmas[k].len() != dim {
                return Err(DataError::InvalidConfig(format!(
                    "class {} parameters must all have dimension {dim}",
                    k + 1
                )));
            }
            if self.class_sigmas[k].iter().any(|s| !(*s > 0.0)) {
                return Err(DataError::InvalidConfig(format!(
                    "class {} sigmas must be positive",
                    k + 1
                )));
            }
        }
        Ok(dim)
    }
}

/// Label for a stream index under a given layout.
fn label_for_index(t: usize, layout: &StreamLayout) -> HealthState {
    if t >= layout.damage_start {
        let incipient_end = layout.damage_start + layout.class_counts[2];
        if t < incipient_end {
            HealthState::from_index(2)
        } else {
            HealthState::from_index(3)
        }
    } else if t >= layout.cold_start && t < layout.cold_end {
        HealthState::from_index(1)
    } else {
        HealthState::from_index(0)
    }
}

/// Draws a synthetic stream in temporal order, deterministically per seed.
pub fn generate_z24_analog(config: &GeneratorConfig) -> Result<MonitoringStream, DataError> {
    let layout = config.layout()?;
    let dim = config.validate_parameters()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(layout.total_count);
    let mut labels = Vec::with_capacity(layout.total_count);
    for t in 0..layout.total_count {
        let label = label_for_index(t, &layout);
        let k = label.index();
        let mut row = Vec::with_capacity(dim);
        for j in 0..dim {
            let z: f64 = normal.sample(&mut rng);
            row.push(config.class_means[k][j] + config.class_sigmas[k][j] * z);
        }
        rows.push(row);
        labels.push(label);
    }
    let features = FeatureMatrix::from_rows(&rows)
        .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let stream = MonitoringStream::new(features, labels)?;
    debug_assert_eq!(stream.class_counts(), layout.class_counts);
    Ok(stream)
}

/// Loads a headerless CSV of `D` numeric feature columns and assigns
/// labels by index: rows from `damage_start_index` split into incipient
/// and advanced halves (odd row to incipient), rows inside any
/// `cold_ranges` entry (half-open `[start, end)`) become class 2, the rest
/// class 1. Damage labels take precedence over cold ranges.
pub fn load_feature_csv(
    path: impl AsRef<Path>,
    damage_start_index: usize,
    cold_ranges: &[(usize, usize)],
) -> Result<MonitoringStream, DataError> {
    let file = std::fs::File::open(path)?;
    read_feature_csv(file, damage_start_index, cold_ranges)
}

pub fn read_feature_csv(
    reader: impl Read,
    damage_start_index: usize,
    cold_ranges: &[(usize, usize)],
) -> Result<MonitoringStream, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (index, record) in csv_reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse {
            row: index,
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let value: f64 = field.parse().map_err(|_| DataError::Parse {
                row: index,
                message: format!("non-numeric cell {field:?}"),
            })?;
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DataError::Parse {
                    row: index,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let n = rows.len();
    let damage_start = damage_start_index.min(n);
    let tail = n - damage_start;
    let incipient_end = damage_start + (tail - tail / 2);
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let label = if t >= damage_start {
            if t < incipient_end {
                HealthState::from_index(2)
            } else {
                HealthState::from_index(3)
            }
        } else if cold_ranges.iter().any(|(lo, hi)| t >= *lo && t < *hi) {
            HealthState::from_index(1)
        } else {
            HealthState::from_index(0)
        };
        labels.push(label);
    }
    let features =
        FeatureMatrix::from_rows(&rows).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    MonitoringStream::new(features, labels)
}

/// Writes a stream as CSV with the feature columns followed by the label
/// rank. Float formatting uses the shortest round-trip representation, so
/// identical streams produce identical bytes.
pub fn stream_to_labelled_csv(stream: &MonitoringStream) -> String {
    let mut out = String::new();
    for t in 0..stream.len() {
        let row = stream.observation(t);
        for v in &row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", stream.true_label(t).rank()));
    }
    out
}
