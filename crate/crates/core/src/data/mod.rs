//! Datasets, ingestion, preprocessing and the synthetic benchmark.

mod csv_io;
mod preprocess;
mod synthetic;

pub use csv_io::{format_real, load_csv, load_matrix_csv, save_csv, save_matrix_csv, LabelColumn};
pub use preprocess::{
    apply_stats, gcn, standardize, zca_apply, zca_fit, Pipeline, PreprocessKind, PreprocessStats,
    DEFAULT_ZCA_EPSILON, STD_FLOOR,
};
pub use synthetic::{make_synthetic, SyntheticSpec, SyntheticSplits};

use crate::error::{Error, Result};
use crate::nn::ImageShape;
use crate::numerics::{Matrix, RngStream};

/// Per-column affine map `z = sigma * y + mu` that undoes logit
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScale {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl TargetScale {
    pub fn denormalize(&self, normalized: &Matrix) -> Matrix {
        let mut out = normalized.clone();
        let cols = out.cols();
        if cols > 0 {
            for row in out.as_mut_slice().chunks_exact_mut(cols) {
                for ((v, m), s) in row.iter_mut().zip(&self.mu).zip(&self.sigma) {
                    *v = s * *v + m;
                }
            }
        }
        out
    }
}

/// Features with hard labels and/or soft (logit) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub hard_labels: Option<Vec<usize>>,
    pub soft_targets: Option<Matrix>,
    pub class_count: usize,
    pub input_shape: Option<ImageShape>,
    /// Set when `soft_targets` are normalized logits.
    pub target_scale: Option<TargetScale>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        hard_labels: Option<Vec<usize>>,
        soft_targets: Option<Matrix>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            hard_labels,
            soft_targets,
            class_count,
            input_shape: None,
            target_scale: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn labeled(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        Self::new(features, Some(labels), None, class_count)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.class_count < 1 {
            return Err(Error::Config("class_count must be at least 1".into()));
        }
        if let Some(labels) = &self.hard_labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
            }
            if let Some((row, bad)) = labels.iter().enumerate().find(|(_, &l)| l >= self.class_count) {
                return Err(Error::Domain(format!(
                    "label {bad} at row {row} out of range for {} classes",
                    self.class_count
                )));
            }
        }
        if let Some(soft) = &self.soft_targets {
            if soft.rows() != n || soft.cols() != self.class_count {
                return Err(Error::Shape(format!(
                    "soft targets are {}x{}, expected {n}x{}",
                    soft.rows(),
                    soft.cols(),
                    self.class_count
                )));
            }
        }
        if let Some(shape) = self.input_shape {
            if shape.size() != self.features.cols() {
                return Err(Error::Shape(format!(
                    "image shape {shape:?} does not match {} features",
                    self.features.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_input_shape(mut self, shape: ImageShape) -> Result<Self> {
        self.input_shape = Some(shape);
        self.validate()?;
        Ok(self)
    }

    /// Rows in the given order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            hard_labels: self
                .hard_labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            soft_targets: self.soft_targets.as_ref().map(|s| s.select_rows(indices)),
            class_count: self.class_count,
            input_shape: self.input_shape,
            target_scale: self.target_scale.clone(),
        }
    }

    /// Sample of `len()` rows drawn with replacement.
    pub fn bootstrap(&self, rng: &mut RngStream) -> Dataset {
        let n = self.len();
        let idx: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
        self.subset(&idx)
    }

    /// Same rows with features replaced (labels and targets kept).
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        let mut ds = self.clone();
        ds.features = features;
        ds.validate()?;
        Ok(ds)
    }
}

/// Seeded shuffle, then contiguous slices of `floor(f * N)` rows each.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be positive")));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::Config(format!("split fractions sum to {total} > 1")));
    }
    let n = dataset.len();
    let perm = RngStream::new(seed).permutation(n);
    let mut start = 0;
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let count = ((f * n as f64 + 1e-9).floor() as usize).min(n - start);
        out.push(dataset.subset(&perm[start..start + count]));
        start += count;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let features =
            Matrix::new(n, 2, (0..2 * n).map(|v| v as f64).collect()).unwrap();
        Dataset::labeled(features, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let err = Dataset::labeled(Matrix::zeros(2, 1), vec![0, 3], 3).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn split_whole_is_permuted_copy() {
        let ds = toy(10);
        let parts = split(&ds, &[1.0], 4).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 10);
        let mut rows: Vec<Vec<u64>> = parts[0]
            .features
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        let mut orig: Vec<Vec<u64>> = ds
            .features
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        orig.sort();
        assert_eq!(rows, orig);
    }

    #[test]
    fn split_halves_are_disjoint() {
        let ds = toy(10);
        let parts = split(&ds, &[0.5, 0.5], 9).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (5, 5));
        for a in parts[0].features.row_iter() {
            assert!(parts[1].features.row_iter().all(|b| a != b));
        }
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = toy(4);
        assert!(matches!(split(&ds, &[0.7, 0.5], 1), Err(Error::Config(_))));
        assert!(matches!(split(&ds, &[0.0], 1), Err(Error::Config(_))));
        assert!(matches!(split(&ds, &[], 1), Err(Error::Config(_))));
    }

    #[test]
    fn denormalize_is_affine() {
        let scale = TargetScale {
            mu: vec![1.0, -2.0],
            sigma: vec![2.0, 0.5],
        };
        let y = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(scale.denormalize(&y).as_slice(), &[3.0, -1.0]);
    }
}
