use super::*;
use crate::decision::HealthState;
use crate::kernel::KernelConfig;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn state(rank: usize) -> HealthState {
    HealthState::new(rank, 4).expect("rank within range")
}

fn zero_margin_expectations(
    class_count: usize,
    label: HealthState,
    nodes: usize,
) -> AuxiliaryExpectations {
    let weights = DMatrix::zeros(0, class_count);
    let gram = DMatrix::zeros(0, 1);
    estep_expectations(&weights, &gram, &[label], nodes)
}

/// Rejection-sampling estimate of `E[f | f ~ N(m, I), f_label > f_j]`.
fn truncated_mean_by_rejection(
    means: &[f64],
    label: usize,
    proposals: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = means.len();
    let mut sums = vec![0.0; k];
    let mut accepted = 0usize;
    let mut draw = vec![0.0; k];
    for _ in 0..proposals {
        for (i, d) in draw.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *d = means[i] + z;
        }
        let ok = (0..k).all(|j| j == label || draw[label] > draw[j]);
        if ok {
            accepted += 1;
            for (s, d) in sums.iter_mut().zip(&draw) {
                *s += *d;
            }
        }
    }
    assert!(accepted > 1000, "rejection sampler starved: {accepted} accepted");
    sums.iter().map(|s| s / accepted as f64).collect()
}

#[test]
fn estep_binary_zero_margins_closed_form() {
    // E[f] = (+, -) 1/sqrt(pi) for K=2 at zero margins, label 1.
    let e = zero_margin_expectations(2, state(1), 64);
    let expected = 1.0 / std::f64::consts::PI.sqrt();
    assert_relative_eq!(e.matrix()[(0, 0)], expected, epsilon = 1e-3);
    assert_relative_eq!(e.matrix()[(1, 0)], -expected, epsilon = 1e-3);
    // The labelled-minus-other gap is E[X|X>0] for X ~ N(0, 2) = 2/sqrt(pi).
    assert_relative_eq!(
        e.matrix()[(0, 0)] - e.matrix()[(1, 0)],
        2.0 / std::f64::consts::PI.sqrt(),
        epsilon = 2e-3
    );
}

#[test]
fn estep_symmetric_three_class() {
    let e = zero_margin_expectations(3, state(2), 64);
    assert_relative_eq!(e.matrix()[(0, 0)], e.matrix()[(2, 0)], epsilon = 1e-12);
    assert!(e.matrix()[(1, 0)] > e.matrix()[(0, 0)]);
}

#[test]
fn estep_inactive_truncation_keeps_means() {
    // label margin +10 over both others: truncation is numerically inactive.
    let weights = DMatrix::from_column_slice(1, 3, &[10.0, 0.0, 0.0]);
    let gram = DMatrix::from_element(1, 1, 1.0);
    let e = estep_expectations(&weights, &gram, &[state(1)], 64);
    assert_relative_eq!(e.matrix()[(0, 0)], 10.0, epsilon = 1e-4);
    assert_relative_eq!(e.matrix()[(1, 0)], 0.0, epsilon = 1e-4);
    assert_relative_eq!(e.matrix()[(2, 0)], 0.0, epsilon = 1e-4);
}

#[test]
fn estep_column_identity_and_max_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..40 {
        let k = 2 + case % 3;
        let means: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let label = rng.gen_range(0..k);
        // One active sample with unit basis reproduces the means directly.
        let weights = DMatrix::from_fn(1, k, |_, c| means[c]);
        let gram = DMatrix::from_element(1, 1, 1.0);
        let e = estep_expectations(&weights, &gram, &[HealthState::from_index(label)], 64);
        // Quadrature self-consistency: E[f_i] - m_i = sum_{c != i}(m_c - E[f_c]).
        let lhs = e.matrix()[(label, 0)] - means[label];
        let rhs: f64 = (0..k)
            .filter(|c| *c != label)
            .map(|c| means[c] - e.matrix()[(c, 0)])
            .sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-9);
        // The labelled entry is the column's strict maximum.
        for c in 0..k {
            if c != label {
                assert!(
                    e.matrix()[(label, 0)] > e.matrix()[(c, 0)],
                    "labelled entry must dominate: case {case}"
                );
            }
        }
    }
}

#[test]
fn estep_matches_rejection_sampling() {
    let cases: &[(Vec<f64>, usize)] = &[
        (vec![0.0, 0.0], 0),
        (vec![0.5, -0.5, 0.2], 2),
        (vec![-1.0, 0.3, 0.8, 0.0], 1),
    ];
    for (i, (means, label)) in cases.iter().enumerate() {
        let k = means.len();
        let weights = DMatrix::from_fn(1, k, |_, c| means[c]);
        let gram = DMatrix::from_element(1, 1, 1.0);
        let e = estep_expectations(&weights, &gram, &[HealthState::from_index(*label)], 64);
        let mc = truncated_mean_by_rejection(means, *label, 400_000, 100 + i as u64);
        for c in 0..k {
            assert!(
                (e.matrix()[(c, 0)] - mc[c]).abs() < 2e-2,
                "case {i} class {c}: quadrature {} vs sampler {}",
                e.matrix()[(c, 0)],
                mc[c]
            );
        }
    }
}

#[test]
fn estep_extreme_margins_never_nan() {
    let weights = DMatrix::from_column_slice(1, 3, &[-60.0, 55.0, 0.0]);
    let gram = DMatrix::from_element(1, 1, 1.0);
    let e = estep_expectations(&weights, &gram, &[state(1)], 64);
    for c in 0..3 {
        assert!(e.matrix()[(c, 0)].is_finite());
    }
}

#[test]
fn mstep_unit_design_cases() {
    // 1x1 design with gram [1]: alpha = 0 gives w = c, alpha = 1 gives c/2.
    let gram = DMatrix::from_element(1, 1, 1.0);
    let targets = AuxiliaryExpectations {
        inner: DMatrix::from_element(1, 1, 0.8),
    };
    let w = mstep_weights(&gram, &targets, &DMatrix::from_element(1, 1, 0.0)).unwrap();
    assert_relative_eq!(w[(0, 0)], 0.8, epsilon = 1e-12);
    let w = mstep_weights(&gram, &targets, &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert_relative_eq!(w[(0, 0)], 0.4, epsilon = 1e-12);
}

#[test]
fn mstep_prior_dominates_at_huge_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 12;
    let gram = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64).abs();
        (-(d * d) / 8.0).exp() + if i == j { 0.01 } else { 0.0 }
    });
    let targets = AuxiliaryExpectations {
        inner: DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0)),
    };
    let scales = DMatrix::from_element(n, 2, 1e12);
    let w = mstep_weights(&gram, &targets, &scales).unwrap();
    for v in w.iter() {
        assert!(v.abs() < 1e-6);
    }
}

#[test]
fn scale_update_formula() {
    let w = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
    let alpha = mrvm2_update_scales(&w, 1e-6, 1e-6);
    assert_relative_eq!(alpha[(0, 0)], 500_001.0, epsilon = 1e-6);
    assert_relative_eq!(alpha[(0, 1)], 1.0, epsilon = 1e-12);
    // Monotone: larger |w| gives smaller alpha.
    let grid = [0.0, 0.1, 0.5, 1.0, 4.0];
    let mut prev = f64::INFINITY;
    for w in grid {
        let a = mrvm2_update_scales(&DMatrix::from_element(1, 1, w), 1e-6, 1e-6)[(0, 0)];
        assert!(a < prev);
        prev = a;
    }
}

#[test]
fn probit_probabilities_basics() {
    // All margins equal: uniform.
    let p = probit_class_probabilities(&[0.0; 4], 64);
    for v in &p {
        assert_relative_eq!(*v, 0.25, epsilon = 1e-9);
    }
    let p = probit_class_probabilities(&[0.3, 0.3], 64);
    assert_relative_eq!(p[0], 0.5, epsilon = 1e-9);
    assert_relative_eq!(p[1], 0.5, epsilon = 1e-9);
    // A +10 margin saturates.
    let p = probit_class_probabilities(&[10.0, 0.0, 0.0], 64);
    assert!(p[0] >= 0.9999);
    // Pre-normalization sum stays near one.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let margins: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let p = probit_class_probabilities(&margins, 64);
        let sum: f64 = p.iter().sum();
        assert!(
            (sum - 1.0).abs() < 1e-3,
            "pre-normalization sum {sum} for margins {margins:?}"
        );
    }
}

fn two_cluster_data(
    per_class: usize,
    centers: &[(f64, f64)],
    spread: f64,
    seed: u64,
) -> (FeatureMatrix, Vec<HealthState>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, (cx, cy)) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            rows.push(vec![cx + spread * dx, cy + spread * dy]);
            labels.push(HealthState::from_index(class));
        }
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), labels)
}

fn train_variant(
    variant: MrvmVariant,
    features: &FeatureMatrix,
    labels: &[HealthState],
    class_count: usize,
) -> MrvmModel {
    let config = TrainConfig::for_variant(variant);
    train(features, labels, class_count, &KernelConfig::default(), &config).unwrap()
}

#[test]
fn train_separable_two_class_is_sparse_and_exact() {
    let (x, y) = two_cluster_data(20, &[(0.0, 0.0), (6.0, 6.0)], 0.5, 0);
    for variant in [MrvmVariant::Pruning, MrvmVariant::Constructive] {
        let model = train_variant(variant, &x, &y, 2);
        assert!(
            model.active_count() <= 8,
            "{variant:?} kept {} of 40",
            model.active_count()
        );
        let mut correct = 0;
        for i in 0..x.len() {
            if model.predict_label(&x.row(i)).unwrap() == y[i] {
                correct += 1;
            }
        }
        assert_eq!(correct, x.len(), "{variant:?} training accuracy");
    }
}

#[test]
fn train_minimal_two_samples_yields_valid_model() {
    // Two points carry little evidence under the unit-noise probit, so the
    // type-II criterion may legitimately retain a single vector; the model
    // must stay valid, deterministic, and normalized either way.
    let x = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![4.0, 4.0]]).unwrap();
    let y = vec![state(1), state(2)];
    for kernel in [
        KernelConfig::default(),
        KernelConfig {
            kind: crate::kernel::KernelKind::Linear,
            ..KernelConfig::default()
        },
    ] {
        for variant in [MrvmVariant::Pruning, MrvmVariant::Constructive] {
            let config = TrainConfig::for_variant(variant);
            let model = train(&x, &y, 2, &kernel, &config).unwrap();
            assert!(model.active_count() >= 1, "{variant:?} under {:?}", kernel.kind);
            assert!(model.active_count() <= 2);
            let again = train(&x, &y, 2, &kernel, &config).unwrap();
            assert_eq!(model.weights, again.weights);
            for i in 0..2 {
                let belief = model.predict_proba(&x.row(i)).unwrap();
                let sum: f64 = belief.probs().iter().sum();
                assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn train_is_deterministic() {
    let (x, y) = two_cluster_data(15, &[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 0.6, 7);
    for variant in [MrvmVariant::Pruning, MrvmVariant::Constructive] {
        let a = train_variant(variant, &x, &y, 3);
        let b = train_variant(variant, &x, &y, 3);
        assert_eq!(a.active_indices, b.active_indices);
        assert_eq!(a.weights, b.weights, "weights must be bitwise identical");
    }
}

#[test]
fn train_rejects_single_class_and_bad_labels() {
    let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let err = train(
        &x,
        &[state(1), state(1)],
        4,
        &KernelConfig::default(),
        &TrainConfig::default(),
    );
    assert!(matches!(err, Err(TrainError::Degenerate(_))));
    let err = train(
        &x,
        &[state(1), state(4)],
        2,
        &KernelConfig::default(),
        &TrainConfig::default(),
    );
    assert!(matches!(err, Err(TrainError::LabelOutOfRange(2))));
}

#[test]
fn predict_uniform_for_zero_weights() {
    let (x, y) = two_cluster_data(5, &[(0.0, 0.0), (4.0, 4.0)], 0.4, 2);
    let mut model = train_variant(MrvmVariant::Pruning, &x, &y, 2);
    for row in &mut model.weights {
        row.iter_mut().for_each(|w| *w = 0.0);
    }
    let belief = model.predict_proba(&[1.0, 1.0]).unwrap();
    for p in belief.probs() {
        assert_relative_eq!(*p, 0.5, epsilon = 1e-9);
    }
    assert_eq!(model.predict_label(&[1.0, 1.0]).unwrap().rank(), 1);
}

#[test]
fn predict_label_matches_argmax_and_clusters() {
    let (x, y) = two_cluster_data(12, &[(0.0, 0.0), (6.0, 0.0)], 0.5, 9);
    let model = train_variant(MrvmVariant::Pruning, &x, &y, 2);
    assert_eq!(model.predict_label(&[0.2, -0.1]).unwrap().rank(), 1);
    assert_eq!(model.predict_label(&[6.1, 0.3]).unwrap().rank(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..25 {
        let p = [rng.gen_range(-2.0..8.0), rng.gen_range(-2.0..2.0)];
        let belief = model.predict_proba(&p).unwrap();
        assert_eq!(model.predict_label(&p).unwrap(), belief.argmax());
    }
}

#[test]
fn label_permutation_equivariance() {
    let (x, y) = two_cluster_data(10, &[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 0.5, 13);
    let permutation = [2usize, 0, 1]; // class c -> permutation[c]
    let y_perm: Vec<HealthState> = y
        .iter()
        .map(|l| HealthState::from_index(permutation[l.index()]))
        .collect();
    for variant in [MrvmVariant::Pruning, MrvmVariant::Constructive] {
        let base = train_variant(variant, &x, &y, 3);
        let perm = train_variant(variant, &x, &y_perm, 3);
        let probe = [2.5, 2.5];
        let p_base = base.predict_proba(&probe).unwrap();
        let p_perm = perm.predict_proba(&probe).unwrap();
        for c in 0..3 {
            assert_relative_eq!(
                p_base.probs()[c],
                p_perm.probs()[permutation[c]],
                epsilon = 1e-9
            );
        }
    }
}

#[test]
fn mrvm2_objective_monotone_once_structure_settles() {
    let (x, y) = two_cluster_data(20, &[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)], 0.6, 17);
    let model = train_variant(MrvmVariant::Pruning, &x, &y, 3);
    let trace = &model.objective_trace;
    assert!(trace.len() >= 2);
    // While the basis is being sculpted the scale updates can trade
    // objective for sparsity; once the active set stops changing every
    // full iteration must improve the penalized log-likelihood.
    let tail = &trace[model.last_structural_pass..];
    assert!(tail.len() >= 2, "no post-sparsification iterations");
    for w in tail.windows(2) {
        assert!(
            w[1] >= w[0] - 1e-6,
            "objective decreased after structure settled: {} -> {}",
            w[0],
            w[1]
        );
    }
    assert!(
        trace.last().unwrap() > trace.first().unwrap(),
        "training must improve the objective overall"
    );
}

#[test]
fn mrvm_sparsity_on_three_class_problem() {
    let (x, y) = two_cluster_data(30, &[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 0.5, 23);
    for variant in [MrvmVariant::Pruning, MrvmVariant::Constructive] {
        let model = train_variant(variant, &x, &y, 3);
        let ratio = model.active_count() as f64 / x.len() as f64;
        assert!(ratio <= 0.2, "{variant:?} kept ratio {ratio}");
    }
}

#[test]
fn mrvm1_first_step_adds_exactly_one_sample() {
    let (x, y) = two_cluster_data(6, &[(0.0, 0.0), (4.0, 4.0)], 0.4, 29);
    let spec = KernelConfig {
        width: crate::kernel::WidthParam::Fixed(0.8),
        ..KernelConfig::default()
    }
    .resolve(&x)
    .expect("kernel resolves");
    let gram_full = crate::kernel::gram(&spec, &x, &x).unwrap();
    let targets = estep_expectations(
        &DMatrix::zeros(0, 2),
        &DMatrix::zeros(0, x.len()),
        &y,
        64,
    );
    let mut state = Mrvm1State::new(gram_full, &targets, 2);
    let action = state.step().unwrap();
    assert!(matches!(action, Mrvm1Action::Added(_)), "got {action:?}");
    assert_eq!(state.active().len(), 1);
}

#[test]
fn mrvm1_objective_monotone_at_fixed_targets() {
    let (x, y) = two_cluster_data(8, &[(0.0, 0.0), (3.0, 3.0)], 0.7, 31);
    let spec = KernelConfig::default().resolve(&x).unwrap();
    let gram_full = crate::kernel::gram(&spec, &x, &x).unwrap();
    let targets = estep_expectations(
        &DMatrix::zeros(0, 2),
        &DMatrix::zeros(0, x.len()),
        &y,
        64,
    );
    let mut state = Mrvm1State::new(gram_full, &targets, 2);
    let mut prev = state.objective().unwrap();
    for _ in 0..60 {
        let action = state.step().unwrap();
        let obj = state.objective().unwrap();
        assert!(
            obj >= prev - 1e-9 * prev.abs().max(1.0),
            "objective fell from {prev} to {obj} on {action:?}"
        );
        prev = obj;
        if action.is_terminal() {
            break;
        }
    }
    assert!(!state.active().is_empty());
}

#[test]
fn model_json_round_trip() {
    let (x, y) = two_cluster_data(8, &[(0.0, 0.0), (4.0, 4.0)], 0.4, 37);
    let model = train_variant(MrvmVariant::Pruning, &x, &y, 2);
    let json = serde_json::to_string(&model).unwrap();
    let back: MrvmModel = serde_json::from_str(&json).unwrap();
    let probe = [2.0, 2.0];
    assert_eq!(
        model.predict_proba(&probe).unwrap().probs(),
        back.predict_proba(&probe).unwrap().probs()
    );
}

#[test]
fn config_validation() {
    let mut config = TrainConfig::default();
    config.quadrature_nodes = 4;
    assert!(config.validate().is_err());
    config = TrainConfig::default();
    config.max_iterations = 0;
    assert!(config.validate().is_err());
    config = TrainConfig::default();
    config.tolerance = 0.0;
    assert!(config.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}
