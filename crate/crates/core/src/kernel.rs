//! Kernel functions, Gram matrices, and the feature-space plumbing shared
//! by the kernel classifiers: per-dimension standardization fitted on the
//! initial labelled set and the median heuristic for the rbf length-scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("invalid feature matrix: {0}")]
    InvalidFeatures(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Linear,
    Polynomial,
}

/// A fully resolved kernel: every parameter is a concrete number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// rbf length-scale, in (standardized) feature units.
    #[serde(default = "default_width")]
    pub width: f64,
    /// Polynomial degree.
    #[serde(default = "default_degree")]
    pub degree: u32,
    /// Polynomial offset.
    #[serde(default)]
    pub offset: f64,
}

fn default_width() -> f64 {
    1.0
}

fn default_degree() -> u32 {
    2
}

impl KernelSpec {
    pub fn rbf(width: f64) -> Result<Self, KernelError> {
        let spec = KernelSpec {
            kind: KernelKind::Rbf,
            width,
            degree: default_degree(),
            offset: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            width: default_width(),
            degree: default_degree(),
            offset: 0.0,
        }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self, KernelError> {
        let spec = KernelSpec {
            kind: KernelKind::Polynomial,
            width: default_width(),
            degree,
            offset,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.kind == KernelKind::Rbf && !(self.width > 0.0 && self.width.is_finite()) {
            return Err(KernelError::InvalidSpec(format!(
                "rbf width must be positive, got {}",
                self.width
            )));
        }
        if self.kind == KernelKind::Polynomial && self.degree < 1 {
            return Err(KernelError::InvalidSpec("degree must be >= 1".into()));
        }
        Ok(())
    }
}

/// Width parameter as it appears in experiment configuration: either a
/// concrete value or `"median"`, resolved against the initial labelled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WidthParam {
    Fixed(f64),
    #[serde(with = "median_literal")]
    Median,
}

mod median_literal {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("median")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let text = String::deserialize(d)?;
        if text == "median" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected \"median\" or a number, got \"{text}\""
            )))
        }
    }
}

/// Kernel description in experiment configuration, e.g.
/// `{"kind": "rbf", "width": "median"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    #[serde(default = "default_width_param")]
    pub width: WidthParam,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default)]
    pub offset: f64,
}

fn default_width_param() -> WidthParam {
    WidthParam::Median
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: KernelKind::Rbf,
            width: WidthParam::Median,
            degree: default_degree(),
            offset: 0.0,
        }
    }
}

impl KernelConfig {
    /// Resolves `"median"` widths against a reference (standardized) sample.
    pub fn resolve(&self, reference: &FeatureMatrix) -> Result<KernelSpec, KernelError> {
        let width = match self.width {
            WidthParam::Fixed(w) => w,
            WidthParam::Median => median_heuristic(reference),
        };
        let spec = KernelSpec {
            kind: self.kind,
            width,
            degree: self.degree,
            offset: self.offset,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Row-major matrix of feature vectors, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    inner: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KernelError> {
        if rows.is_empty() {
            return Err(KernelError::InvalidFeatures("no rows".into()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(KernelError::InvalidFeatures("zero-dimensional rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(KernelError::InvalidFeatures(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(KernelError::InvalidFeatures(format!(
                    "row {i} contains a non-finite entry"
                )));
            }
        }
        let inner = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Ok(FeatureMatrix { inner })
    }

    pub fn from_matrix(inner: DMatrix<f64>) -> Result<Self, KernelError> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(KernelError::InvalidFeatures("empty matrix".into()));
        }
        if inner.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::InvalidFeatures("non-finite entry".into()));
        }
        Ok(FeatureMatrix { inner })
    }

    pub fn len(&self) -> usize {
        self.inner.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inner.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inner.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            inner: self.inner.select_rows(indices),
        }
    }
}

impl Serialize for FeatureMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        FeatureMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Per-dimension z-score transform fitted on a reference sample. Dimensions
/// with (near-)zero spread keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &FeatureMatrix) -> Self {
        let n = features.len() as f64;
        let dim = features.dim();
        let mut mean = vec![0.0; dim];
        for i in 0..features.len() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += features.matrix()[(i, j)];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut scale = vec![0.0; dim];
        for i in 0..features.len() {
            for (j, s) in scale.iter_mut().enumerate() {
                let d = features.matrix()[(i, j)] - mean[j];
                *s += d * d;
            }
        }
        for s in &mut scale {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Standardizer { mean, scale }
    }

    /// Identity transform for a given dimension.
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        if x.len() != self.dim() {
            return Err(KernelError::DimensionMismatch(format!(
                "point has dimension {}, standardizer has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix, KernelError> {
        if features.dim() != self.dim() {
            return Err(KernelError::DimensionMismatch(format!(
                "features have dimension {}, standardizer has {}",
                features.dim(),
                self.dim()
            )));
        }
        let mut inner = features.matrix().clone();
        for i in 0..inner.nrows() {
            for j in 0..inner.ncols() {
                inner[(i, j)] = (inner[(i, j)] - self.mean[j]) / self.scale[j];
            }
        }
        Ok(FeatureMatrix { inner })
    }
}

/// Evaluates the kernel at a pair of points.
///
/// rbf: `exp(-||a-b||^2 / (2 width^2))`; linear: `a . b`;
/// polynomial: `(a . b + offset)^degree`.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64, KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::DimensionMismatch(format!(
            "vectors of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    spec.validate()?;
    Ok(kernel_eval_unchecked(spec, a, b))
}

fn kernel_eval_unchecked(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec.kind {
        KernelKind::Rbf => {
            let mut sq = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                sq += d * d;
            }
            (-sq / (2.0 * spec.width * spec.width)).exp()
        }
        KernelKind::Linear => dot(a, b),
        KernelKind::Polynomial => (dot(a, b) + spec.offset).powi(spec.degree as i32),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix with entry `(i, j) = k(rows_i, cols_j)`.
pub fn gram(
    spec: &KernelSpec,
    rows: &FeatureMatrix,
    cols: &FeatureMatrix,
) -> Result<DMatrix<f64>, KernelError> {
    if rows.dim() != cols.dim() {
        return Err(KernelError::DimensionMismatch(format!(
            "row dimension {} vs column dimension {}",
            rows.dim(),
            cols.dim()
        )));
    }
    spec.validate()?;
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for i in 0..rows.len() {
        let a: Vec<f64> = rows.matrix().row(i).iter().copied().collect();
        for j in 0..cols.len() {
            let b: Vec<f64> = cols.matrix().row(j).iter().copied().collect();
            out[(i, j)] = kernel_eval_unchecked(spec, &a, &b);
        }
    }
    Ok(out)
}

/// Median pairwise Euclidean distance. Falls back to 1.0 when there are
/// fewer than two points or all pairwise distances vanish.
pub fn median_heuristic(features: &FeatureMatrix) -> f64 {
    let n = features.len();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sq = 0.0;
            for c in 0..features.dim() {
                let d = features.matrix()[(i, c)] - features.matrix()[(j, c)];
                sq += d * d;
            }
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 1e-12 {
        median
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rbf_at_zero_distance_is_one() {
        let spec = KernelSpec::rbf(1.0).unwrap();
        let a = [0.3, -1.2, 4.0];
        assert_eq!(kernel_eval(&spec, &a, &a).unwrap(), 1.0);
    }

    #[test]
    fn linear_orthogonal_is_zero() {
        let spec = KernelSpec::linear();
        assert_eq!(kernel_eval(&spec, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rbf_unit_distance() {
        let spec = KernelSpec::rbf(1.0).unwrap();
        let v = kernel_eval(&spec, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(v, 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn polynomial_eval() {
        let spec = KernelSpec::polynomial(3, 1.0).unwrap();
        // (1*2 + 0 + 1)^3 = 27
        assert_relative_eq!(
            kernel_eval(&spec, &[1.0, 0.0], &[2.0, 5.0]).unwrap(),
            27.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = KernelSpec::linear();
        assert!(kernel_eval(&spec, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::rbf(-1.0).is_err());
        assert!(KernelSpec::polynomial(0, 0.0).is_err());
    }

    #[test]
    fn gram_single_point_is_one_by_one() {
        let spec = KernelSpec::rbf(2.0).unwrap();
        let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let g = gram(&spec, &x, &x).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 1.0);
    }

    fn random_features(rng: &mut impl Rng, n: usize, d: usize) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        FeatureMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn rbf_gram_diagonal_ones_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_features(&mut rng, 20, 4);
        let spec = KernelSpec::rbf(1.5).unwrap();
        let g = gram(&spec, &x, &x).unwrap();
        for i in 0..20 {
            assert_eq!(g[(i, i)], 1.0);
            for j in 0..20 {
                assert_relative_eq!(g[(i, j)], g[(j, i)], epsilon = 1e-12);
                assert!(g[(i, j)] > 0.0 && g[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn rbf_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let n = 10 + 8 * trial;
            let x = random_features(&mut rng, n, 3);
            let spec = KernelSpec::rbf(1.0).unwrap();
            let g = gram(&spec, &x, &x).unwrap();
            let eig = g.symmetric_eigenvalues();
            for v in eig.iter() {
                assert!(*v >= -1e-8, "eigenvalue {v} below PSD tolerance");
            }
        }
    }

    #[test]
    fn median_heuristic_basics() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        // pairwise distances 1, 3, 2 -> median 2
        assert_relative_eq!(median_heuristic(&x), 2.0, epsilon = 1e-12);
        let single = FeatureMatrix::from_rows(&[vec![5.0]]).unwrap();
        assert_eq!(median_heuristic(&single), 1.0);
        let dup = FeatureMatrix::from_rows(&[vec![2.0], vec![2.0]]).unwrap();
        assert_eq!(median_heuristic(&dup), 1.0);
    }

    #[test]
    fn standardizer_zero_mean_unit_scale() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 50.0]])
            .unwrap();
        let st = Standardizer::fit(&x);
        let z = st.apply(&x).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| z.matrix()[(i, j)]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
            assert_relative_eq!(var, 1.0, epsilon = 1e-12);
        }
        // constant dimension keeps unit scale
        let c = FeatureMatrix::from_rows(&[vec![2.0], vec![2.0]]).unwrap();
        let st = Standardizer::fit(&c);
        assert_eq!(st.scale, vec![1.0]);
    }

    #[test]
    fn kernel_config_json_shapes() {
        let cfg: KernelConfig =
            serde_json::from_str(r#"{"kind": "rbf", "width": "median"}"#).unwrap();
        assert_eq!(cfg.width, WidthParam::Median);
        let cfg: KernelConfig = serde_json::from_str(r#"{"kind": "rbf", "width": 0.7}"#).unwrap();
        assert_eq!(cfg.width, WidthParam::Fixed(0.7));
        assert!(serde_json::from_str::<KernelConfig>(r#"{"kind": "rbf", "width": "mean"}"#)
            .is_err());
        let round = serde_json::to_string(&KernelConfig::default()).unwrap();
        assert!(round.contains("\"median\""));
    }

    #[test]
    fn feature_matrix_validation() {
        assert!(FeatureMatrix::from_rows(&[]).is_err());
        assert!(FeatureMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(FeatureMatrix::from_rows(&[vec![f64::NAN]]).is_err());
    }

    proptest! {
        #[test]
        fn kernel_eval_is_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            width in 0.1f64..4.0,
        ) {
            for spec in [
                KernelSpec::rbf(width).unwrap(),
                KernelSpec::linear(),
                KernelSpec::polynomial(2, 1.0).unwrap(),
            ] {
                let ab = kernel_eval(&spec, &a, &b).unwrap();
                let ba = kernel_eval(&spec, &b, &a).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
            }
        }

        #[test]
        fn rbf_values_in_unit_interval(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
            width in 0.25f64..4.0,
        ) {
            let spec = KernelSpec::rbf(width).unwrap();
            let v = kernel_eval(&spec, &a, &b).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
        }
    }
}
