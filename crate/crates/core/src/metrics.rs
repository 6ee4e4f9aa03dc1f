//! Evaluation quantities for campaign runs: decision accuracy against the
//! perfect-information oracle, macro-averaged f1, and aggregation of
//! repeated runs into median/interquartile curves, query-count histograms,
//! and per-observation query frequencies.

use crate::active::{ClassifierKind, RunRecord};
use crate::decision::HealthState;
use serde::{Deserialize, Serialize};

/// One point of a metric-versus-queries curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub query_count: usize,
    pub value: f64,
}

/// Per-run evaluation artifacts extracted from a [`RunRecord`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub classifier_kind: ClassifierKind,
    pub seed: u64,
    pub total_queries: usize,
    pub decision_accuracy_curve: Vec<CurvePoint>,
    pub f1_curve: Vec<CurvePoint>,
    /// Query indicator per observation, `'0'`/`'1'` per index.
    pub query_indicator: String,
}

impl RunSummary {
    pub fn from_record(record: &RunRecord) -> Self {
        let indicator: String = record
            .query_indicator()
            .iter()
            .map(|b| if *b { '1' } else { '0' })
            .collect();
        RunSummary {
            classifier_kind: record.classifier_kind,
            seed: record.seed,
            total_queries: record.total_queries(),
            decision_accuracy_curve: record
                .milestones
                .iter()
                .map(|m| CurvePoint {
                    query_count: m.query_count,
                    value: m.decision_accuracy,
                })
                .collect(),
            f1_curve: record
                .milestones
                .iter()
                .map(|m| CurvePoint {
                    query_count: m.query_count,
                    value: m.macro_f1,
                })
                .collect(),
            query_indicator: indicator,
        }
    }

    pub fn indicator_bits(&self) -> Vec<bool> {
        self.query_indicator.chars().map(|c| c == '1').collect()
    }
}

/// Fraction of logged steps whose chosen action matches the
/// perfect-information oracle action.
pub fn decision_accuracy(record: &RunRecord) -> f64 {
    assert!(!record.steps.is_empty(), "record has no steps");
    let agree = record
        .steps
        .iter()
        .filter(|s| s.action == s.oracle_action)
        .count();
    agree as f64 / record.steps.len() as f64
}

/// Unweighted mean over classes of `2 P R / (P + R)`, with a per-class f1
/// of zero when the class has no predictions and no true members.
pub fn macro_f1(predicted: &[HealthState], truth: &[HealthState], class_count: usize) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "length mismatch");
    assert!(class_count > 0);
    let mut true_positive = vec![0usize; class_count];
    let mut predicted_count = vec![0usize; class_count];
    let mut truth_count = vec![0usize; class_count];
    for (p, t) in predicted.iter().zip(truth) {
        predicted_count[p.index()] += 1;
        truth_count[t.index()] += 1;
        if p == t {
            true_positive[p.index()] += 1;
        }
    }
    let mut total = 0.0;
    for k in 0..class_count {
        let denom = predicted_count[k] + truth_count[k];
        if denom > 0 {
            total += 2.0 * true_positive[k] as f64 / denom as f64;
        }
    }
    total / class_count as f64
}

/// Aggregated point: median and interquartile bounds at one query count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub query_count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateResult {
    pub decision_accuracy: Vec<AggregatePoint>,
    pub f1: Vec<AggregatePoint>,
    /// `(total queries, run count)` per occupied bin, ascending.
    pub query_histogram: Vec<(usize, usize)>,
    /// Across-run query counts per observation index.
    pub per_observation_counts: Vec<usize>,
    /// `per_observation_counts` normalized by the number of runs.
    pub per_observation_frequency: Vec<f64>,
}

/// Linear-interpolation percentile of pre-sorted values, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn curve_value_at(curve: &[CurvePoint], query_count: usize) -> f64 {
    // Last observation carried forward; queries before the first milestone
    // read the first value.
    let mut value = curve.first().map_or(f64::NAN, |p| p.value);
    for point in curve {
        if point.query_count <= query_count {
            value = point.value;
        } else {
            break;
        }
    }
    value
}

fn aggregate_curves(
    summaries: &[RunSummary],
    pick: impl Fn(&RunSummary) -> &[CurvePoint],
) -> Vec<AggregatePoint> {
    let mut grid: Vec<usize> = summaries
        .iter()
        .flat_map(|s| pick(s).iter().map(|p| p.query_count))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    grid.into_iter()
        .map(|q| {
            let mut values: Vec<f64> = summaries
                .iter()
                .map(|s| curve_value_at(pick(s), q))
                .collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
            AggregatePoint {
                query_count: q,
                median: percentile(&values, 0.5),
                q25: percentile(&values, 0.25),
                q75: percentile(&values, 0.75),
            }
        })
        .collect()
}

/// Aggregates run summaries: pointwise median and interquartile curves
/// (aligned on query count, last observation carried forward), a histogram
/// of total query counts, and per-observation query frequencies.
pub fn aggregate_runs(summaries: &[RunSummary]) -> AggregateResult {
    assert!(!summaries.is_empty(), "no summaries to aggregate");
    let decision_accuracy = aggregate_curves(summaries, |s| &s.decision_accuracy_curve);
    let f1 = aggregate_curves(summaries, |s| &s.f1_curve);

    let min_total = summaries.iter().map(|s| s.total_queries).min().unwrap();
    let max_total = summaries.iter().map(|s| s.total_queries).max().unwrap();
    let mut query_histogram = Vec::with_capacity(max_total - min_total + 1);
    for bin in min_total..=max_total {
        let count = summaries.iter().filter(|s| s.total_queries == bin).count();
        query_histogram.push((bin, count));
    }

    let stream_length = summaries
        .iter()
        .map(|s| s.query_indicator.len())
        .max()
        .unwrap();
    let mut per_observation_counts = vec![0usize; stream_length];
    for summary in summaries {
        for (i, bit) in summary.indicator_bits().iter().enumerate() {
            if *bit {
                per_observation_counts[i] += 1;
            }
        }
    }
    let runs = summaries.len() as f64;
    let per_observation_frequency = per_observation_counts
        .iter()
        .map(|c| *c as f64 / runs)
        .collect();

    AggregateResult {
        decision_accuracy,
        f1,
        query_histogram,
        per_observation_counts,
        per_observation_frequency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::{Milestone, ModelSnapshot, StepRecord};
    use crate::decision::{Action, Belief};
    use approx::assert_relative_eq;

    fn state(rank: usize) -> HealthState {
        HealthState::new(rank, 4).unwrap()
    }

    fn record_with_actions(pairs: &[(usize, usize)]) -> RunRecord {
        let steps = pairs
            .iter()
            .enumerate()
            .map(|(t, (a, o))| StepRecord {
                t,
                belief: Belief::uniform(4),
                evpi: 0.0,
                queried: false,
                action: Action::new(*a, 2).unwrap(),
                oracle_action: Action::new(*o, 2).unwrap(),
                predicted_label: state(1),
                true_label: state(1),
            })
            .collect();
        RunRecord {
            classifier_kind: ClassifierKind::Gmm,
            seed: 0,
            stream_length: pairs.len(),
            initial_indices: vec![],
            steps,
            milestones: vec![],
            query_count: 0,
            training_failures: vec![],
            final_model: ModelSnapshot::Uniform,
        }
    }

    #[test]
    fn decision_accuracy_counts_matches() {
        let record = record_with_actions(&[(0, 0); 10]);
        assert_eq!(decision_accuracy(&record), 1.0);
        let mut pairs = vec![(0, 0); 9];
        pairs.push((1, 0));
        let record = record_with_actions(&pairs);
        assert_relative_eq!(decision_accuracy(&record), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn macro_f1_cases() {
        let truth: Vec<HealthState> = (0..10).map(|i| state(1 + i % 2)).collect();
        assert_eq!(macro_f1(&truth, &truth, 4), 0.5); // classes 3, 4 unseen
        assert_eq!(macro_f1(&truth, &truth, 2), 1.0);
        // two balanced classes, everything predicted class 1
        let predicted = vec![state(1); 10];
        assert_relative_eq!(macro_f1(&predicted, &truth, 2), 1.0 / 3.0, epsilon = 1e-12);
        // consistent permutation leaves the score unchanged
        let truth_perm: Vec<HealthState> =
            truth.iter().map(|l| state(3 - l.rank())).collect();
        let predicted_perm: Vec<HealthState> =
            predicted.iter().map(|l| state(3 - l.rank())).collect();
        assert_relative_eq!(
            macro_f1(&predicted_perm, &truth_perm, 2),
            macro_f1(&predicted, &truth, 2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn percentile_linear_interpolation() {
        let values = [1.0, 2.0, 3.0];
        assert_eq!(percentile(&values, 0.5), 2.0);
        assert_eq!(percentile(&values, 0.25), 1.5);
        assert_eq!(percentile(&values, 0.75), 2.5);
        assert_eq!(percentile(&values, 0.0), 1.0);
        assert_eq!(percentile(&values, 1.0), 3.0);
    }

    fn summary(kind: ClassifierKind, total: usize, curve: &[(usize, f64)], n: usize) -> RunSummary {
        RunSummary {
            classifier_kind: kind,
            seed: 0,
            total_queries: total,
            decision_accuracy_curve: curve
                .iter()
                .map(|(q, v)| CurvePoint {
                    query_count: *q,
                    value: *v,
                })
                .collect(),
            f1_curve: curve
                .iter()
                .map(|(q, v)| CurvePoint {
                    query_count: *q,
                    value: *v,
                })
                .collect(),
            query_indicator: "0".repeat(n),
        }
    }

    #[test]
    fn aggregate_single_run_is_identity() {
        let s = summary(ClassifierKind::Gmm, 5, &[(5, 0.5), (6, 0.7)], 10);
        let agg = aggregate_runs(&[s]);
        assert_eq!(agg.decision_accuracy.len(), 2);
        for p in &agg.decision_accuracy {
            assert_eq!(p.median, p.q25);
            assert_eq!(p.median, p.q75);
        }
        assert_eq!(agg.query_histogram, vec![(5, 1)]);
    }

    #[test]
    fn aggregate_median_and_iqr() {
        let runs = [
            summary(ClassifierKind::Gmm, 5, &[(5, 1.0)], 4),
            summary(ClassifierKind::Gmm, 6, &[(5, 2.0)], 4),
            summary(ClassifierKind::Gmm, 7, &[(5, 3.0)], 4),
        ];
        let agg = aggregate_runs(&runs);
        let p = agg.decision_accuracy[0];
        assert_eq!(p.median, 2.0);
        assert_eq!(p.q25, 1.5);
        assert_eq!(p.q75, 2.5);
        assert_eq!(agg.query_histogram, vec![(5, 1), (6, 1), (7, 1)]);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let a = summary(ClassifierKind::Gmm, 5, &[(5, 0.2), (8, 0.9)], 6);
        let b = summary(ClassifierKind::Gmm, 9, &[(5, 0.4), (7, 0.6)], 6);
        let c = summary(ClassifierKind::Gmm, 7, &[(5, 0.1)], 6);
        let forward = aggregate_runs(&[a.clone(), b.clone(), c.clone()]);
        let backward = aggregate_runs(&[c, b, a]);
        assert_eq!(forward.decision_accuracy, backward.decision_accuracy);
        assert_eq!(forward.query_histogram, backward.query_histogram);
    }

    #[test]
    fn locf_alignment_carries_last_value() {
        let a = summary(ClassifierKind::Gmm, 5, &[(5, 0.2), (10, 1.0)], 4);
        let b = summary(ClassifierKind::Gmm, 5, &[(5, 0.4)], 4);
        let agg = aggregate_runs(&[a, b]);
        // grid: 5, 10; at 10 run b holds its last value 0.4
        let p10 = agg.decision_accuracy.iter().find(|p| p.query_count == 10).unwrap();
        assert_relative_eq!(p10.median, 0.7, epsilon = 1e-12); // mean of 1.0, 0.4 -> median interp
    }

    #[test]
    fn aggregate_percentiles_are_ordered() {
        let runs: Vec<RunSummary> = (0..9)
            .map(|i| {
                summary(
                    ClassifierKind::Mrvm2,
                    5 + i,
                    &[(5, i as f64 / 10.0), (6 + i, 0.5 + i as f64 / 20.0)],
                    8,
                )
            })
            .collect();
        let agg = aggregate_runs(&runs);
        for p in agg.decision_accuracy.iter().chain(&agg.f1) {
            assert!(p.q25 <= p.median && p.median <= p.q75);
        }
    }

    #[test]
    fn per_observation_counts_sum_indicators() {
        let mut a = summary(ClassifierKind::Gmm, 2, &[(2, 0.5)], 4);
        a.query_indicator = "1010".into();
        let mut b = summary(ClassifierKind::Gmm, 1, &[(1, 0.5)], 4);
        b.query_indicator = "1000".into();
        let agg = aggregate_runs(&[a, b]);
        assert_eq!(agg.per_observation_counts, vec![2, 0, 1, 0]);
        assert_eq!(agg.per_observation_frequency, vec![1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn summary_from_record_round_trips_indicator() {
        let mut record = record_with_actions(&[(0, 0), (1, 1), (0, 0)]);
        record.initial_indices = vec![0];
        record.stream_length = 4;
        record.steps[1].queried = true;
        record.steps[1].t = 2;
        record.steps[2].t = 3;
        record.query_count = 1;
        record.milestones = vec![
            Milestone {
                query_count: 1,
                decision_accuracy: 0.5,
                macro_f1: 0.25,
            },
            Milestone {
                query_count: 2,
                decision_accuracy: 0.75,
                macro_f1: 0.5,
            },
        ];
        let summary = RunSummary::from_record(&record);
        assert_eq!(summary.total_queries, 2);
        assert_eq!(summary.query_indicator, "1010");
        assert_eq!(summary.decision_accuracy_curve.len(), 2);
        assert_eq!(summary.f1_curve[1].value, 0.5);
    }
}
