//! Sparse multiclass relevance vector machines with a multinomial probit
//! link, in two sparsity schemes: a constructive active-set build driven by
//! fast type-II maximum likelihood (variant 1) and a prune-from-full scheme
//! driven by per-weight scale updates under a Gamma hyperprior (variant 2).
//!
//! The model is linear in kernel basis functions evaluated against a sparse
//! set of retained training samples (the relevance vectors): auxiliary
//! class scores `f = W^T k(A, x)` with unit-variance Gaussian noise, class
//! assignment by the largest score, and class probabilities given by the
//! probit expectation
//! `p(k) = E_u[ prod_{j != k} Phi(u + (w_k - w_j)^T k) ]`
//! evaluated with Gauss-Hermite quadrature.
//!
//! Training alternates an exact E-step for the truncated auxiliary-score
//! means (reduced to a one-dimensional integral over the shared truncation
//! variable), a ridge M-step for the weights, and the variant's scale
//! update. All steps are deterministic, so training is reproducible from
//! the configuration alone.

mod fast_ml;

pub use fast_ml::{Mrvm1Action, Mrvm1State};

use crate::decision::{Belief, HealthState};
use crate::kernel::{
    gram, FeatureMatrix, KernelConfig, KernelError, KernelSpec, Standardizer,
};
use crate::quadrature::{gauss_hermite, log_sum_exp, normal_ln_cdf, normal_ln_pdf};
use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate training set: {0}")]
    Degenerate(String),
    #[error("labels must be within 1..={0}")]
    LabelOutOfRange(usize),
    #[error("M-step system not positive definite after jitter")]
    NotPositiveDefinite,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Sparsity scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MrvmVariant {
    #[serde(rename = "1", alias = "mrvm1")]
    Constructive,
    #[serde(rename = "2", alias = "mrvm2")]
    Pruning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: MrvmVariant,
    pub max_iterations: usize,
    /// Relative change in the training objective below which training stops.
    pub tolerance: f64,
    /// Gamma hyperprior shape on the weight scales.
    pub gamma_a: f64,
    /// Gamma hyperprior rate on the weight scales.
    pub gamma_b: f64,
    /// A sample leaves the active set when all its class scales exceed this.
    pub prune_threshold: f64,
    pub quadrature_nodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: MrvmVariant::Pruning,
            max_iterations: 200,
            tolerance: 1e-4,
            gamma_a: 1e-6,
            gamma_b: 1e-6,
            prune_threshold: 1e5,
            quadrature_nodes: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: MrvmVariant) -> Self {
        TrainConfig {
            variant,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_iterations < 1 {
            return Err(TrainError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(TrainError::InvalidConfig("tolerance must be > 0".into()));
        }
        if self.quadrature_nodes < 8 {
            return Err(TrainError::InvalidConfig(
                "quadrature_nodes must be >= 8".into(),
            ));
        }
        if !(self.gamma_a > 0.0 && self.gamma_b > 0.0) {
            return Err(TrainError::InvalidConfig("gamma_a, gamma_b must be > 0".into()));
        }
        Ok(())
    }
}

/// Posterior means of the auxiliary scores for every training column, a
/// `K x n` matrix. For a column with label `i`, entry `(i, column)` is the
/// column's strict maximum: the truncation `f_i > f_j` holds almost surely.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryExpectations {
    inner: DMatrix<f64>,
}

impl AuxiliaryExpectations {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn class_count(&self) -> usize {
        self.inner.nrows()
    }

    pub fn len(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.ncols() == 0
    }
}

/// A trained sparse model. `active_inputs` rows live in the standardized
/// feature space; incoming points are standardized before kernel
/// evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MrvmModel {
    pub kernel: KernelSpec,
    pub standardization: Standardizer,
    pub active_inputs: FeatureMatrix,
    /// Indices of the relevance vectors within the training set.
    pub active_indices: Vec<usize>,
    /// `n* x K` weights over the active basis.
    pub weights: Vec<Vec<f64>>,
    /// `n* x K` scales; variant 1 replicates its per-sample scale per class.
    pub scales: Vec<Vec<f64>>,
    pub class_count: usize,
    pub quadrature_nodes: usize,
    /// False when training stopped at the iteration cap instead of the
    /// tolerance; the model holds the last iterate.
    pub converged: bool,
    /// Training objective after each full iteration.
    pub objective_trace: Vec<f64>,
    /// Index into `objective_trace` after which the active set stopped
    /// changing.
    pub last_structural_pass: usize,
}

impl MrvmModel {
    pub fn active_count(&self) -> usize {
        self.active_indices.len()
    }

    /// Margins `W^T k(A, x)` for a raw (unstandardized) input.
    pub fn margins(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        let z = self.standardization.apply_vec(x)?;
        let mut margins = vec![0.0; self.class_count];
        for (i, w_row) in self.weights.iter().enumerate() {
            let basis = crate::kernel::kernel_eval(&self.kernel, &self.active_inputs.row(i), &z)?;
            for (k, m) in margins.iter_mut().enumerate() {
                *m += w_row[k] * basis;
            }
        }
        Ok(margins)
    }

    /// Class probabilities under the multinomial probit likelihood,
    /// renormalized to sum to exactly one.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Belief, TrainError> {
        let margins = self.margins(x)?;
        let raw = probit_class_probabilities(&margins, self.quadrature_nodes);
        Ok(Belief::from_weights(raw).expect("probit probabilities are positive"))
    }

    /// Most probable class; ties break toward the lower class index.
    pub fn predict_label(&self, x: &[f64]) -> Result<HealthState, TrainError> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

/// Pre-normalization probit class probabilities
/// `p(k) = E_u[ prod_{j != k} Phi(u + m_k - m_j) ]` by Gauss-Hermite
/// quadrature with log-domain products, so extreme margins saturate
/// instead of overflowing. The exact values sum to one; quadrature error
/// leaves the sum within ~1e-3 of one for 32+ nodes.
pub fn probit_class_probabilities(margins: &[f64], quadrature_nodes: usize) -> Vec<f64> {
    let rule = gauss_hermite(quadrature_nodes);
    let k = margins.len();
    let mut probs = vec![0.0; k];
    let mut logits = vec![0.0; rule.len()];
    for target in 0..k {
        for (idx, (z, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let mut ln_term = w.ln();
            for j in 0..k {
                if j != target {
                    ln_term += normal_ln_cdf(z + margins[target] - margins[j]);
                }
            }
            logits[idx] = ln_term;
        }
        probs[target] = log_sum_exp(&logits).exp();
    }
    probs
}

/// Posterior means `E[f | f ~ N(m, I), f_label > f_j for all j]` for every
/// training column, with `m = W^T k`. The shared truncation variable is
/// integrated by Gauss-Hermite quadrature; all products run in the log
/// domain, so numerically extreme margins degrade gracefully instead of
/// producing NaN.
pub fn estep_expectations(
    weights: &DMatrix<f64>,
    gram_active_by_all: &DMatrix<f64>,
    labels: &[HealthState],
    quadrature_nodes: usize,
) -> AuxiliaryExpectations {
    let class_count = weights.ncols();
    let n = gram_active_by_all.ncols();
    assert_eq!(weights.nrows(), gram_active_by_all.nrows(), "weight/basis mismatch");
    assert_eq!(labels.len(), n, "label/column mismatch");
    let means = weights.transpose() * gram_active_by_all; // K x n
    let rule = gauss_hermite(quadrature_nodes);
    let mut out = DMatrix::zeros(class_count, n);

    let mut log_posterior = vec![0.0; rule.len()];
    for t in 0..n {
        let label = labels[t].index();
        let m_label = means[(label, t)];

        // Node log-masses of the posterior over the shared variable u.
        for (idx, (z, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let mut ln_mass = w.ln();
            for j in 0..class_count {
                if j != label {
                    ln_mass += normal_ln_cdf(z + m_label - means[(j, t)]);
                }
            }
            log_posterior[idx] = ln_mass;
        }
        let ln_z = log_sum_exp(&log_posterior);
        // All-underflow fallback: revert to the prior node weights.
        let posterior: Vec<f64> = if ln_z.is_finite() {
            log_posterior.iter().map(|lp| (lp - ln_z).exp()).collect()
        } else {
            rule.weights.clone()
        };

        // E[f_j] = m_j - E_post[ hazard(u + m_label - m_j) ] for j != label,
        // where hazard = phi / Phi of the upper truncation point.
        for j in 0..class_count {
            if j == label {
                continue;
            }
            let delta = m_label - means[(j, t)];
            let mut pull = 0.0;
            for (z, p) in rule.nodes.iter().zip(&posterior) {
                let x = z + delta;
                pull += p * (normal_ln_pdf(x) - normal_ln_cdf(x)).exp();
            }
            out[(j, t)] = means[(j, t)] - pull;
        }
        // Direct quadrature for the labelled component:
        // E[f_label] = m_label + E_post[u].
        let mut shift = 0.0;
        for (z, p) in rule.nodes.iter().zip(&posterior) {
            shift += p * z;
        }
        out[(label, t)] = m_label + shift;
    }
    AuxiliaryExpectations { inner: out }
}

/// Ridge M-step: per class `k`,
/// `w_k = (K_A K_A^T + diag(alpha_k))^-1 K_A y_k`, solved by Cholesky
/// factorization with a single jittered retry (`1e-8 * trace`).
pub fn mstep_weights(
    gram_active: &DMatrix<f64>,
    expectations: &AuxiliaryExpectations,
    scales: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TrainError> {
    let gram_sq = gram_active * gram_active.transpose();
    Ok(solve_posterior(&gram_sq, gram_active, expectations, scales, false)?.0)
}

fn solve_posterior(
    gram_sq: &DMatrix<f64>,
    gram_active: &DMatrix<f64>,
    expectations: &AuxiliaryExpectations,
    scales: &DMatrix<f64>,
    with_variances: bool,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>), TrainError> {
    let n_active = gram_active.nrows();
    let class_count = expectations.class_count();
    assert_eq!(scales.nrows(), n_active, "scales/basis mismatch");
    assert_eq!(scales.ncols(), class_count, "scales/class mismatch");
    assert_eq!(
        expectations.len(),
        gram_active.ncols(),
        "expectations/basis mismatch"
    );
    let targets = gram_active * expectations.matrix().transpose(); // n* x K
    let mut weights = DMatrix::zeros(n_active, class_count);
    let mut variances = with_variances.then(|| DMatrix::zeros(n_active, class_count));
    for k in 0..class_count {
        let mut system = gram_sq.clone();
        for i in 0..n_active {
            system[(i, i)] += scales[(i, k)];
        }
        let chol = spd_cholesky(system)?;
        let rhs = targets.column(k).into_owned();
        weights.set_column(k, &chol.solve(&rhs));
        if let Some(v) = variances.as_mut() {
            let inverse = chol.inverse();
            for i in 0..n_active {
                v[(i, k)] = inverse[(i, i)];
            }
        }
    }
    Ok((weights, variances))
}

fn spd_cholesky(system: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>, TrainError> {
    if let Some(chol) = Cholesky::new(system.clone()) {
        return Ok(chol);
    }
    let jitter = 1e-8 * system.trace();
    let mut retry = system;
    for i in 0..retry.nrows() {
        retry[(i, i)] += jitter;
    }
    Cholesky::new(retry).ok_or(TrainError::NotPositiveDefinite)
}

/// Posterior-mean scale update under the Gamma hyperprior:
/// `alpha_{i,k} = (2 a + 1) / (w_{i,k}^2 + 2 b)`.
pub fn mrvm2_update_scales(weights: &DMatrix<f64>, gamma_a: f64, gamma_b: f64) -> DMatrix<f64> {
    weights.map(|w| (2.0 * gamma_a + 1.0) / (w * w + 2.0 * gamma_b))
}

/// Trains a model with the standardizer and kernel width resolved from the
/// training data itself (median heuristic for `"median"` widths).
pub fn train(
    features: &FeatureMatrix,
    labels: &[HealthState],
    class_count: usize,
    kernel: &KernelConfig,
    config: &TrainConfig,
) -> Result<MrvmModel, TrainError> {
    Trainer::from_data(features, kernel, config.clone())?.train(features, labels, class_count)
}

/// Training entry point with frozen preprocessing, as used by the active
/// learning harness: the standardizer and kernel width come from the
/// initial labelled set and are not refitted as the labelled set grows.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub kernel: KernelSpec,
    pub standardizer: Standardizer,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn from_data(
        reference: &FeatureMatrix,
        kernel: &KernelConfig,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        let standardizer = Standardizer::fit(reference);
        let standardized = standardizer.apply(reference)?;
        let kernel = kernel.resolve(&standardized)?;
        Ok(Trainer {
            kernel,
            standardizer,
            config,
        })
    }

    pub fn train(
        &self,
        features: &FeatureMatrix,
        labels: &[HealthState],
        class_count: usize,
    ) -> Result<MrvmModel, TrainError> {
        self.config.validate()?;
        if labels.len() != features.len() {
            return Err(TrainError::Degenerate(format!(
                "{} labels for {} samples",
                labels.len(),
                features.len()
            )));
        }
        if features.is_empty() {
            return Err(TrainError::Degenerate("no training samples".into()));
        }
        if labels.iter().any(|l| l.rank() > class_count) {
            return Err(TrainError::LabelOutOfRange(class_count));
        }
        let mut seen = vec![false; class_count];
        for l in labels {
            seen[l.index()] = true;
        }
        if seen.iter().filter(|s| **s).count() < 2 {
            return Err(TrainError::Degenerate(
                "fewer than two distinct labels present".into(),
            ));
        }

        let standardized = self.standardizer.apply(features)?;
        let gram_full = gram(&self.kernel, &standardized, &standardized)?;
        let outcome = match self.config.variant {
            MrvmVariant::Pruning => {
                train_mrvm2(&gram_full, labels, class_count, &self.config)?
            }
            MrvmVariant::Constructive => {
                fast_ml::train_mrvm1(&gram_full, labels, class_count, &self.config)?
            }
        };

        let active_inputs = standardized.select(&outcome.active);
        Ok(MrvmModel {
            kernel: self.kernel.clone(),
            standardization: self.standardizer.clone(),
            active_inputs,
            active_indices: outcome.active,
            weights: matrix_rows(&outcome.weights),
            scales: matrix_rows(&outcome.scales),
            class_count,
            quadrature_nodes: self.config.quadrature_nodes,
            converged: outcome.converged,
            objective_trace: outcome.objective_trace,
            last_structural_pass: outcome.last_structural_pass,
        })
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) struct TrainOutcome {
    pub active: Vec<usize>,
    pub weights: DMatrix<f64>,
    pub scales: DMatrix<f64>,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    /// Index into `objective_trace` of the pass after which the active set
    /// last changed.
    pub last_structural_pass: usize,
}

/// Penalized log-likelihood tracked during mRVM2 training: the multinomial
/// probit log-likelihood of the labels plus the log Student-t weight
/// penalty implied by integrating the scales out of the Gamma hyperprior
/// (constant terms dropped).
fn penalized_objective(
    margins: &DMatrix<f64>, // K x n
    labels: &[HealthState],
    weights: &DMatrix<f64>,
    gamma_a: f64,
    gamma_b: f64,
    quadrature_nodes: usize,
) -> f64 {
    let class_count = margins.nrows();
    let rule = gauss_hermite(quadrature_nodes);
    let mut loglik = 0.0;
    let mut logits = vec![0.0; rule.len()];
    for (t, label) in labels.iter().enumerate() {
        let target = label.index();
        for (idx, (z, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let mut ln_term = w.ln();
            for j in 0..class_count {
                if j != target {
                    ln_term += normal_ln_cdf(z + margins[(target, t)] - margins[(j, t)]);
                }
            }
            logits[idx] = ln_term;
        }
        loglik += log_sum_exp(&logits);
    }
    let penalty: f64 = weights
        .iter()
        .map(|w| -(gamma_a + 0.5) * (1.0 + w * w / (2.0 * gamma_b)).ln())
        .sum();
    loglik + penalty
}

/// Scale cap; a weight whose scale reaches it is certainly prunable.
const SCALE_CAP: f64 = 1e12;

/// E/M passes before the first scale update. The auxiliary targets need to
/// grow to their working magnitude first; updating the scales against the
/// small early weights shrinks the whole basis symmetrically to death.
const ESTABLISHMENT_PASSES: usize = 20;

fn train_mrvm2(
    gram_full: &DMatrix<f64>,
    labels: &[HealthState],
    class_count: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let n = gram_full.nrows();
    let mut active: Vec<usize> = (0..n).collect();
    // Light initial shrinkage (1/K^2): the first fit tracks the targets
    // closely, so weight magnitudes separate before any pruning happens.
    let init_scale = 1.0 / (class_count * class_count) as f64;
    let mut scales = DMatrix::from_element(n, class_count, init_scale);
    let mut weights = DMatrix::zeros(n, class_count);
    let mut objective_trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut passes = 0usize;
    let mut last_structural_pass = 0usize;
    let mut outer_checkpoint: Option<f64> = None;

    'train: loop {
        // E/M passes at fixed scales until the fit settles; the auxiliary
        // targets need room to grow before the scales react, otherwise
        // shrinkage outruns the fit and the basis dies symmetrically.
        let gram_active = gram_full.select_rows(&active);
        let gram_sq = &gram_active * gram_active.transpose();
        let mut variances = DMatrix::zeros(active.len(), class_count);
        let fit_passes = if passes == 0 { ESTABLISHMENT_PASSES } else { 1 };
        for _ in 0..fit_passes {
            let targets =
                estep_expectations(&weights, &gram_active, labels, config.quadrature_nodes);
            let last_pass = passes + 1 >= config.max_iterations;
            let (w, v) = solve_posterior(&gram_sq, &gram_active, &targets, &scales, true)?;
            weights = w;
            variances = v.expect("variances requested");
            passes += 1;

            let margins = weights.transpose() * &gram_active;
            let objective = penalized_objective(
                &margins,
                labels,
                &weights,
                config.gamma_a,
                config.gamma_b,
                config.quadrature_nodes,
            );
            let settled = objective_trace.last().is_some_and(|prev| {
                (objective - prev).abs() <= config.tolerance * prev.abs().max(1.0)
            });
            objective_trace.push(objective);
            if last_pass {
                break 'train;
            }
            if settled {
                break;
            }
        }

        let objective = *objective_trace.last().expect("at least one pass ran");
        let outer_settled = outer_checkpoint.is_some_and(|prev| {
            (objective - prev).abs() <= config.tolerance * prev.abs().max(1.0)
        });
        outer_checkpoint = Some(objective);

        // Scale update with the well-determinedness factor
        // gamma = 1 - alpha * Sigma_ii: supported weights settle,
        // unsupported ones diverge and cross the prune threshold.
        for i in 0..active.len() {
            for k in 0..class_count {
                let gamma = (1.0 - scales[(i, k)] * variances[(i, k)]).clamp(1e-12, 1.0);
                let w = weights[(i, k)];
                scales[(i, k)] = (gamma / (w * w).max(1e-24)).min(SCALE_CAP);
            }
        }
        let keep: Vec<usize> = (0..active.len())
            .filter(|i| (0..class_count).any(|k| scales[(*i, k)] <= config.prune_threshold))
            .collect();
        let pruned = keep.len() < active.len();
        if pruned {
            last_structural_pass = passes;
        }
        if keep.is_empty() {
            // Keep the sample carrying the most weight mass so the active
            // set never empties.
            let best = (0..active.len())
                .max_by(|a, b| {
                    let wa: f64 = (0..class_count).map(|k| weights[(*a, k)].powi(2)).sum();
                    let wb: f64 = (0..class_count).map(|k| weights[(*b, k)].powi(2)).sum();
                    wa.partial_cmp(&wb).expect("finite weights")
                })
                .expect("non-empty active set");
            active = vec![active[best]];
            scales = scales.select_rows(&[best]);
            weights = weights.select_rows(&[best]);
        } else if pruned {
            active = keep.iter().map(|i| active[*i]).collect();
            scales = scales.select_rows(&keep);
            weights = weights.select_rows(&keep);
        }

        if outer_settled && !pruned {
            converged = true;
            break;
        }
    }

    Ok(TrainOutcome {
        active,
        weights,
        scales,
        converged,
        objective_trace,
        last_structural_pass,
    })
}

#[cfg(test)]
mod tests;
