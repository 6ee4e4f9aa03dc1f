//! Generative per-class Gaussian baseline with a conjugate
//! normal-inverse-Wishart prior on each class density and a symmetric
//! Dirichlet prior on the class proportions.
//!
//! Fitting is a closed-form sufficient-statistics update; prediction uses
//! the exact posterior predictive, a multivariate Student-t per class,
//! weighted by Dirichlet-smoothed class counts.

use crate::decision::{Belief, HealthState};
use crate::kernel::FeatureMatrix;
use crate::quadrature::log_sum_exp;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("labels must be within 1..={0}")]
    LabelOutOfRange(usize),
}

/// Normal-inverse-Wishart parameters shared by the prior and the per-class
/// posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwParams {
    pub mean: Vec<f64>,
    /// Pseudo-observation count tying the mean to the covariance.
    pub scale_count: f64,
    pub dof: f64,
    /// Scatter matrix, row-major `D x D`.
    pub scatter: Vec<Vec<f64>>,
}

impl NiwParams {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<(), GmmError> {
        let d = self.dim() as f64;
        if self.dim() == 0 {
            return Err(GmmError::InvalidPrior("empty mean".into()));
        }
        if !(self.scale_count > 0.0) {
            return Err(GmmError::InvalidPrior("scale_count must be > 0".into()));
        }
        if !(self.dof > d - 1.0) {
            return Err(GmmError::InvalidPrior(format!(
                "degrees of freedom {} must exceed D - 1 = {}",
                self.dof,
                d - 1.0
            )));
        }
        let scatter = self.scatter_matrix();
        if scatter.nrows() != self.dim() || scatter.ncols() != self.dim() {
            return Err(GmmError::InvalidPrior("scatter is not D x D".into()));
        }
        if Cholesky::new(scatter).is_none() {
            return Err(GmmError::InvalidPrior(
                "scatter must be symmetric positive-definite".into(),
            ));
        }
        Ok(())
    }

    fn scatter_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.scatter[i][j])
    }
}

/// Prior configuration: one NIW prior shared by every class plus the
/// Dirichlet concentration for the class proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    pub class_count: usize,
    pub niw: NiwParams,
    pub dirichlet: f64,
}

impl GmmPrior {
    /// Weakly informative prior anchored on a reference sample: mean at the
    /// grand mean, unit pseudo-count, `D + 2` degrees of freedom, scatter
    /// equal to the identity scaled by the pooled per-dimension variance,
    /// and unit Dirichlet concentration.
    pub fn from_reference(reference: &FeatureMatrix, class_count: usize) -> Self {
        let n = reference.len() as f64;
        let d = reference.dim();
        let mut mean = vec![0.0; d];
        for i in 0..reference.len() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += reference.matrix()[(i, j)];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut pooled = 0.0;
        for i in 0..reference.len() {
            for (j, m) in mean.iter().enumerate() {
                let diff = reference.matrix()[(i, j)] - m;
                pooled += diff * diff;
            }
        }
        pooled /= n * d as f64;
        if pooled < 1e-12 {
            pooled = 1.0;
        }
        let scatter = (0..d)
            .map(|i| (0..d).map(|j| if i == j { pooled } else { 0.0 }).collect())
            .collect();
        GmmPrior {
            class_count,
            niw: NiwParams {
                mean,
                scale_count: 1.0,
                dof: d as f64 + 2.0,
                scatter,
            },
            dirichlet: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if self.class_count == 0 {
            return Err(GmmError::InvalidPrior("class_count must be >= 1".into()));
        }
        if !(self.dirichlet > 0.0) {
            return Err(GmmError::InvalidPrior("dirichlet must be > 0".into()));
        }
        self.niw.validate()
    }
}

/// Fitted model: per-class NIW posteriors and observation counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmModel {
    pub classes: Vec<NiwParams>,
    pub counts: Vec<usize>,
    pub dirichlet: f64,
}

impl GmmModel {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    /// Posterior predictive parameters for one class: the location, scale
    /// matrix, and degrees of freedom of the multivariate Student-t.
    pub fn predictive(&self, class: usize) -> StudentT {
        let post = &self.classes[class];
        let d = post.dim() as f64;
        let t_dof = post.dof - d + 1.0;
        let factor = (post.scale_count + 1.0) / (post.scale_count * t_dof);
        let scale = post.scatter_matrix() * factor;
        StudentT::new(DVector::from_vec(post.mean.clone()), scale, t_dof)
    }

    /// `p(k | x)` from Dirichlet-smoothed class weights and the per-class
    /// posterior predictive densities, normalized in the log domain.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Belief, GmmError> {
        if x.len() != self.dim() {
            return Err(GmmError::DimensionMismatch(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        let point = DVector::from_column_slice(x);
        let total: f64 =
            self.counts.iter().map(|c| *c as f64).sum::<f64>() + self.dirichlet * self.class_count() as f64;
        let log_terms: Vec<f64> = (0..self.class_count())
            .map(|k| {
                let weight = (self.counts[k] as f64 + self.dirichlet) / total;
                weight.ln() + self.predictive(k).ln_pdf(&point)
            })
            .collect();
        let norm = log_sum_exp(&log_terms);
        let probs: Vec<f64> = log_terms.iter().map(|lt| (lt - norm).exp()).collect();
        Ok(Belief::from_weights(probs).expect("positive class probabilities"))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<HealthState, GmmError> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

/// Multivariate Student-t density with a Cholesky-factored scale matrix.
#[derive(Debug, Clone)]
pub struct StudentT {
    location: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    dof: f64,
    ln_norm: f64,
}

impl StudentT {
    pub fn new(location: DVector<f64>, scale: DMatrix<f64>, dof: f64) -> Self {
        let d = location.len() as f64;
        let chol = Cholesky::new(scale).expect("posterior scale matrices are SPD");
        let ln_det: f64 = (0..location.len())
            .map(|i| 2.0 * chol.l_dirty()[(i, i)].ln())
            .sum();
        let ln_norm = ln_gamma(0.5 * (dof + d))
            - ln_gamma(0.5 * dof)
            - 0.5 * d * (dof * std::f64::consts::PI).ln()
            - 0.5 * ln_det;
        StudentT {
            location,
            chol,
            dof,
            ln_norm,
        }
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.location
    }

    /// Covariance of the Student-t (defined for `dof > 2`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let scale = self.chol.l() * self.chol.l().transpose();
        scale * (self.dof / (self.dof - 2.0))
    }

    pub fn ln_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = self.location.len() as f64;
        let diff = x - &self.location;
        let solved = self.chol.solve(&diff);
        let mahalanobis = diff.dot(&solved);
        self.ln_norm - 0.5 * (self.dof + d) * (mahalanobis / self.dof).ln_1p()
    }
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Conjugate posterior update per class from labelled data; classes absent
/// from the data keep the prior.
pub fn gmm_fit(
    features: &FeatureMatrix,
    labels: &[HealthState],
    prior: &GmmPrior,
) -> Result<GmmModel, GmmError> {
    prior.validate()?;
    if features.len() != labels.len() {
        return Err(GmmError::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            features.len()
        )));
    }
    if features.dim() != prior.niw.dim() {
        return Err(GmmError::DimensionMismatch(format!(
            "features have dimension {}, prior has {}",
            features.dim(),
            prior.niw.dim()
        )));
    }
    if labels.iter().any(|l| l.rank() > prior.class_count) {
        return Err(GmmError::LabelOutOfRange(prior.class_count));
    }

    let d = features.dim();
    let mut classes = Vec::with_capacity(prior.class_count);
    let mut counts = vec![0usize; prior.class_count];
    for label in labels {
        counts[label.index()] += 1;
    }

    for k in 0..prior.class_count {
        let n = counts[k];
        if n == 0 {
            classes.push(prior.niw.clone());
            continue;
        }
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.index() == k)
            .map(|(i, _)| i)
            .collect();
        let nf = n as f64;
        let mut sample_mean = DVector::zeros(d);
        for &i in &rows {
            for j in 0..d {
                sample_mean[j] += features.matrix()[(i, j)];
            }
        }
        sample_mean /= nf;
        let mut scatter = DMatrix::zeros(d, d);
        for &i in &rows {
            let diff =
                DVector::from_fn(d, |j, _| features.matrix()[(i, j)] - sample_mean[j]);
            scatter += &diff * diff.transpose();
        }

        let prior_mean = DVector::from_vec(prior.niw.mean.clone());
        let kappa0 = prior.niw.scale_count;
        let kappa_n = kappa0 + nf;
        let posterior_mean = (&prior_mean * kappa0 + &sample_mean * nf) / kappa_n;
        let mean_shift = &sample_mean - &prior_mean;
        let shift_term = (&mean_shift * mean_shift.transpose()) * (kappa0 * nf / kappa_n);
        let posterior_scatter = prior.niw.scatter_matrix() + scatter + shift_term;

        classes.push(NiwParams {
            mean: posterior_mean.iter().copied().collect(),
            scale_count: kappa_n,
            dof: prior.niw.dof + nf,
            scatter: (0..d)
                .map(|i| (0..d).map(|j| posterior_scatter[(i, j)]).collect())
                .collect(),
        });
    }

    Ok(GmmModel {
        classes,
        counts,
        dirichlet: prior.dirichlet,
    })
}
