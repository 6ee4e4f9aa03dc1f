//! Constructive active-set selection for mRVM1 by fast type-II maximum
//! likelihood.
//!
//! At fixed auxiliary targets the per-sample contribution to the marginal
//! log-likelihood decomposes through a sparsity factor `s_i` (shared across
//! classes) and per-class quality factors `q_{i,k}`:
//!
//! ```text
//! theta_i = sum_k q_{i,k}^2 - K s_i
//! ```
//!
//! A sample with `theta_i > 0` supports a finite optimal scale
//! `alpha_i = K s_i^2 / theta_i` (add or re-estimate); a member with
//! `theta_i <= 0` is best excluded (`alpha -> inf`). Every action is the
//! coordinate-wise maximizer of the marginal likelihood in its own scale,
//! so the objective is non-decreasing across calls.

use super::{estep_expectations, AuxiliaryExpectations, TrainConfig, TrainError, TrainOutcome};
use crate::decision::HealthState;
use nalgebra::{Cholesky, DMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// Forced keeps reuse the sample's sparsity factor as its scale: strong
// enough shrinkage to be honest about the weak evidence, weak enough that
// the auxiliary targets can still polarize and admit further samples.

/// Relative scale change below which a re-estimate is a no-op.
const REESTIMATE_TOL: f64 = 1e-6;

/// Consecutive sub-tolerance non-structural iterations before training
/// settles; a single stalled re-estimate must not end training while adds
/// with real objective gains are still pending.
const SETTLED_STREAK: usize = 3;

/// Objective gains at or below this are treated as converged.
const GAIN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mrvm1Action {
    Added(usize),
    Deleted(usize),
    Reestimated(usize),
    /// No candidate improves the objective; the state kept its best single
    /// sample (adding it first if the active set was empty).
    ForcedKeep(usize),
    Converged,
}

impl Mrvm1Action {
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            Mrvm1Action::Added(_) | Mrvm1Action::Deleted(_) | Mrvm1Action::ForcedKeep(_)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Mrvm1Action::Converged)
    }
}

/// Active set, per-sample scales, and fixed regression targets for one
/// round of constructive selection.
#[derive(Debug, Clone)]
pub struct Mrvm1State {
    gram: DMatrix<f64>,    // n x n, row i is the basis vector of sample i
    targets: DMatrix<f64>, // K x n
    basis_norms: Vec<f64>, // k_i . k_i
    active: Vec<usize>,
    alpha: Vec<f64>,
    class_count: usize,
}

struct Factors {
    s: Vec<f64>,
    /// Leave-self-out quality factors, `n x K`.
    q: DMatrix<f64>,
    theta: Vec<f64>,
    /// Position of each sample within the active set, if a member.
    member: Vec<Option<usize>>,
}

impl Factors {
    /// Contribution of sample `i` to the marginal log-likelihood when held
    /// at scale `alpha`, relative to exclusion (`alpha = inf` contributes
    /// zero): `1/2 [K ln(alpha/(alpha+s)) + sum_k q_k^2/(alpha+s)]`.
    fn contribution(&self, i: usize, alpha: f64, class_count: usize) -> f64 {
        let s = self.s[i];
        let quality: f64 = (0..class_count).map(|k| self.q[(i, k)].powi(2)).sum();
        0.5 * (class_count as f64 * (alpha.ln() - (alpha + s).ln()) + quality / (alpha + s))
    }
}

impl Mrvm1State {
    pub fn new(gram: DMatrix<f64>, targets: &AuxiliaryExpectations, class_count: usize) -> Self {
        assert_eq!(gram.nrows(), gram.ncols(), "training gram must be square");
        assert_eq!(targets.len(), gram.ncols(), "target/basis mismatch");
        assert_eq!(targets.class_count(), class_count);
        let basis_norms = (0..gram.nrows())
            .map(|i| gram.row(i).iter().map(|v| v * v).sum())
            .collect();
        Mrvm1State {
            gram,
            targets: targets.matrix().clone(),
            basis_norms,
            active: Vec::new(),
            alpha: Vec::new(),
            class_count,
        }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn set_targets(&mut self, targets: &AuxiliaryExpectations) {
        assert_eq!(targets.len(), self.gram.ncols());
        assert_eq!(targets.class_count(), self.class_count);
        self.targets = targets.matrix().clone();
    }

    fn cholesky(&self) -> Result<Option<Cholesky<f64, nalgebra::Dyn>>, TrainError> {
        if self.active.is_empty() {
            return Ok(None);
        }
        let ka = self.gram.select_rows(&self.active);
        let mut b = &ka * ka.transpose();
        for (i, a) in self.alpha.iter().enumerate() {
            b[(i, i)] += a;
        }
        match Cholesky::new(b.clone()) {
            Some(c) => Ok(Some(c)),
            None => {
                let jitter = 1e-8 * b.trace();
                for i in 0..b.nrows() {
                    b[(i, i)] += jitter;
                }
                Cholesky::new(b)
                    .map(Some)
                    .ok_or(TrainError::NotPositiveDefinite)
            }
        }
    }

    fn factors(&self) -> Result<Factors, TrainError> {
        let n = self.gram.nrows();
        let k = self.class_count;
        let gy = &self.gram * self.targets.transpose(); // n x K

        let (s_cap, q_cap): (Vec<f64>, DMatrix<f64>) = if self.active.is_empty() {
            (self.basis_norms.clone(), gy.clone())
        } else {
            let ka = self.gram.select_rows(&self.active);
            let chol = self.cholesky()?.expect("non-empty active set");
            let cprod = &ka * self.gram.transpose(); // n* x n, column i = Ka k_i
            let v = chol.solve(&cprod);
            let r = &ka * self.targets.transpose(); // n* x K
            let w_post = chol.solve(&r);
            let mut s = Vec::with_capacity(n);
            for i in 0..n {
                let mut corr = 0.0;
                for row in 0..self.active.len() {
                    corr += cprod[(row, i)] * v[(row, i)];
                }
                s.push(self.basis_norms[i] - corr);
            }
            let q = gy - cprod.transpose() * w_post;
            (s, q)
        };

        let mut member = vec![None; n];
        for (pos, idx) in self.active.iter().enumerate() {
            member[*idx] = Some(pos);
        }

        let mut s = vec![0.0; n];
        let mut q = DMatrix::zeros(n, k);
        let mut theta = vec![0.0; n];
        for i in 0..n {
            let (si, qi_scale) = match member[i] {
                Some(pos) => {
                    let a = self.alpha[pos];
                    let denom = a - s_cap[i];
                    if denom <= 1e-10 * a.abs().max(1.0) {
                        // Numerically exhausted basis: force it out.
                        (1e12, 0.0)
                    } else {
                        (a * s_cap[i] / denom, a / denom)
                    }
                }
                None => (s_cap[i], 1.0),
            };
            let si = si.max(1e-12);
            let mut quality = 0.0;
            for c in 0..k {
                let qc = qi_scale * q_cap[(i, c)];
                q[(i, c)] = qc;
                quality += qc * qc;
            }
            s[i] = si;
            theta[i] = quality - k as f64 * si;
        }
        Ok(Factors { s, q, theta, member })
    }

    /// One add / delete / re-estimate action. Candidates follow the fast
    /// type-II maximum-likelihood rule (the maximal-theta sample is the add
    /// candidate, members with theta <= 0 are delete candidates, members
    /// with theta > 0 re-estimate to their coordinate optimum); the action
    /// actually taken is the one with the largest exact objective gain, so
    /// a stalled re-estimate can never starve a profitable add.
    pub fn step(&mut self) -> Result<Mrvm1Action, TrainError> {
        let factors = self.factors()?;
        let k = self.class_count as f64;
        let n = self.gram.nrows();

        enum Plan {
            Add(usize, f64),
            Delete(usize),
            Reestimate(usize, f64),
        }
        let mut best: Option<(f64, Plan)> = None;
        let consider = |gain: f64, plan: Plan, best: &mut Option<(f64, Plan)>| {
            if gain > GAIN_FLOOR && best.as_ref().is_none_or(|(g, _)| gain > *g) {
                *best = Some((gain, plan));
            }
        };

        // Add candidate: the maximal-theta non-member.
        let add = (0..n)
            .filter(|i| factors.member[*i].is_none() && factors.theta[*i] > 0.0)
            .max_by(|a, b| {
                factors.theta[*a]
                    .partial_cmp(&factors.theta[*b])
                    .expect("finite theta")
            });
        if let Some(i) = add {
            let alpha = k * factors.s[i] * factors.s[i] / factors.theta[i];
            if alpha.is_finite() && alpha > 0.0 {
                let gain = factors.contribution(i, alpha, self.class_count);
                consider(gain, Plan::Add(i, alpha), &mut best);
            }
        }
        let any_add_candidate = add.is_some();

        for i in 0..n {
            let Some(pos) = factors.member[i] else { continue };
            let old_alpha = self.alpha[pos];
            if factors.theta[i] <= 0.0 {
                // Exclusion is this coordinate's optimum; the gain is the
                // removed (negative) contribution. Never empty the model
                // unless a replacement is on offer.
                if self.active.len() > 1 || any_add_candidate {
                    let gain = -factors.contribution(i, old_alpha, self.class_count);
                    consider(gain, Plan::Delete(i), &mut best);
                }
            } else {
                let new_alpha = k * factors.s[i] * factors.s[i] / factors.theta[i];
                if !new_alpha.is_finite() || new_alpha <= 0.0 {
                    continue;
                }
                if (new_alpha.ln() - old_alpha.ln()).abs() < REESTIMATE_TOL {
                    continue;
                }
                let gain = factors.contribution(i, new_alpha, self.class_count)
                    - factors.contribution(i, old_alpha, self.class_count);
                consider(gain, Plan::Reestimate(i, new_alpha), &mut best);
            }
        }

        match best {
            Some((_, Plan::Add(i, alpha))) => {
                self.active.push(i);
                self.alpha.push(alpha);
                Ok(Mrvm1Action::Added(i))
            }
            Some((_, Plan::Delete(i))) => {
                let pos = factors.member[i].expect("deletion candidate is a member");
                self.active.remove(pos);
                self.alpha.remove(pos);
                Ok(Mrvm1Action::Deleted(i))
            }
            Some((_, Plan::Reestimate(i, alpha))) => {
                let pos = factors.member[i].expect("re-estimate candidate is a member");
                self.alpha[pos] = alpha;
                Ok(Mrvm1Action::Reestimated(i))
            }
            None if self.active.is_empty() => {
                // No candidate improves on the empty model; keep the least
                // bad sample so a model exists at all.
                let i = (0..n)
                    .max_by(|a, b| {
                        factors.theta[*a]
                            .partial_cmp(&factors.theta[*b])
                            .expect("finite theta")
                    })
                    .expect("at least one candidate sample");
                self.active.push(i);
                self.alpha.push(factors.s[i].max(1e-6));
                Ok(Mrvm1Action::ForcedKeep(i))
            }
            None => Ok(Mrvm1Action::Converged),
        }
    }

    /// Marginal log-likelihood of the targets under the current scales:
    /// `-1/2 sum_k [ n ln 2 pi + ln|C| + y_k^T C^-1 y_k ]` with
    /// `C = I + K_A^T diag(alpha)^-1 K_A`.
    pub fn objective(&self) -> Result<f64, TrainError> {
        let n = self.gram.nrows() as f64;
        let k = self.class_count;
        let mut total = 0.0;
        if self.active.is_empty() {
            for c in 0..k {
                let norm: f64 = self.targets.row(c).iter().map(|v| v * v).sum();
                total += -0.5 * (n * LN_2PI + norm);
            }
            return Ok(total);
        }
        let ka = self.gram.select_rows(&self.active);
        let chol = self.cholesky()?.expect("non-empty active set");
        // ln|C| = ln|B| - sum ln alpha with B = Ka Ka^T + diag(alpha)
        let mut ln_det_c = -self.alpha.iter().map(|a| a.ln()).sum::<f64>();
        for i in 0..self.active.len() {
            ln_det_c += 2.0 * chol.l_dirty()[(i, i)].ln();
        }
        let r = &ka * self.targets.transpose(); // n* x K
        let w_post = chol.solve(&r);
        for c in 0..k {
            let norm: f64 = self.targets.row(c).iter().map(|v| v * v).sum();
            let reduction: f64 = (0..self.active.len()).map(|i| r[(i, c)] * w_post[(i, c)]).sum();
            total += -0.5 * (n * LN_2PI + ln_det_c + norm - reduction);
        }
        Ok(total)
    }

    /// Posterior mean weights over the active basis for the current targets.
    pub fn posterior_weights(&self) -> Result<DMatrix<f64>, TrainError> {
        if self.active.is_empty() {
            return Ok(DMatrix::zeros(0, self.class_count));
        }
        let ka = self.gram.select_rows(&self.active);
        let chol = self.cholesky()?.expect("non-empty active set");
        let r = &ka * self.targets.transpose();
        Ok(chol.solve(&r))
    }

    /// Per-sample scales replicated per class, the shape shared with mRVM2.
    pub fn scales_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.active.len(), self.class_count, |i, _| self.alpha[i])
    }

}

pub(crate) fn train_mrvm1(
    gram_full: &DMatrix<f64>,
    labels: &[HealthState],
    class_count: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let empty_weights = DMatrix::zeros(0, class_count);
    let empty_gram = DMatrix::zeros(0, gram_full.ncols());
    let targets = estep_expectations(&empty_weights, &empty_gram, labels, config.quadrature_nodes);
    let mut state = Mrvm1State::new(gram_full.clone(), &targets, class_count);

    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut last_structural_pass = 0usize;
    let mut stalled = 0usize;
    for pass in 0..config.max_iterations {
        let action = state.step()?;
        if action.is_structural() {
            last_structural_pass = pass;
        }
        let weights = state.posterior_weights()?;
        let gram_active = gram_full.select_rows(state.active());
        let targets = estep_expectations(&weights, &gram_active, labels, config.quadrature_nodes);
        state.set_targets(&targets);

        let objective = state.objective()?;
        let small_change = objective_trace.last().is_some_and(|prev: &f64| {
            (objective - prev).abs() <= config.tolerance * prev.abs().max(1.0)
        });
        if !action.is_structural() && small_change {
            stalled += 1;
        } else {
            stalled = 0;
        }
        objective_trace.push(objective);
        if action.is_terminal() || stalled >= SETTLED_STREAK {
            converged = true;
            break;
        }
    }

    let weights = state.posterior_weights()?;
    let scales = state.scales_matrix();

    Ok(TrainOutcome {
        active: state.active().to_vec(),
        weights,
        scales,
        converged,
        objective_trace,
        last_structural_pass,
    })
}
