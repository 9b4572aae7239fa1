//! Feature preprocessing fitted on training data.
//!
//! Statistics are always fitted on the training split and then applied
//! unchanged to dev, test and unlabeled rows.
//!
//! Sidecar format (`"SMPS"` magic, otherwise the same little-endian layout
//! as model files): u32 version, u32 step count, then per step a u8 kind
//! (0 standardize, 1 gcn, 2 zca), f64 epsilon, u32 length + f64 means,
//! u32 length + f64 stds, u8 zca flag and, when set, u32 dimension followed
//! by the row-major whitening matrix.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Reader, Writer};
use crate::numerics::{axis_stats, matmul, Axis, Matrix};

/// Floor applied to standard deviations before dividing.
pub const STD_FLOOR: f64 = 1e-8;
/// Eigenvalue regularizer used when none is configured.
pub const DEFAULT_ZCA_EPSILON: f64 = 1e-5;

const STATS_MAGIC: &[u8; 4] = b"SMPS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessKind {
    /// Per-column `(x - mu) / sigma`.
    Standardize,
    /// Per-row `(x - mean) / std` (global contrast normalization).
    Gcn,
    /// Column centering followed by the symmetric whitening matrix.
    Zca,
}

impl PreprocessKind {
    pub fn name(self) -> &'static str {
        match self {
            PreprocessKind::Standardize => "standardize",
            PreprocessKind::Gcn => "gcn",
            PreprocessKind::Zca => "zca",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standardize" => Ok(PreprocessKind::Standardize),
            "gcn" => Ok(PreprocessKind::Gcn),
            "zca" => Ok(PreprocessKind::Zca),
            other => Err(Error::Config(format!(
                "unknown preprocessing step {other:?} (expected standardize, gcn or zca)"
            ))),
        }
    }
}

/// Frozen statistics of one preprocessing step.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats {
    pub kind: PreprocessKind,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub zca_matrix: Option<Matrix>,
    pub epsilon: f64,
}

/// Per-column standardization with train statistics.
pub fn standardize(train: &Dataset) -> Result<(Dataset, PreprocessStats)> {
    let (mu, sigma) = axis_stats(&train.features, Axis::Rows)?;
    let stats = PreprocessStats {
        kind: PreprocessKind::Standardize,
        mu,
        sigma,
        zca_matrix: None,
        epsilon: STD_FLOOR,
    };
    let out = apply_stats(&stats, train)?;
    Ok((out, stats))
}

/// Applies frozen statistics to another dataset.
pub fn apply_stats(stats: &PreprocessStats, other: &Dataset) -> Result<Dataset> {
    other.with_features(stats.transform(&other.features)?)
}

/// Global contrast normalization of each row.
pub fn gcn(images: &Matrix) -> Matrix {
    let mut out = images.clone();
    let cols = out.cols();
    if cols == 0 {
        return out;
    }
    for row in out.as_mut_slice().chunks_exact_mut(cols) {
        let n = cols as f64;
        let mean = row.iter().sum::<f64>() / n;
        let std = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let denom = std.max(STD_FLOOR);
        row.iter_mut().for_each(|v| *v = (*v - mean) / denom);
    }
    out
}

/// Fits ZCA whitening `E diag((lambda + eps)^-1/2) E^T` on centered rows.
pub fn zca_fit(images: &Matrix, epsilon: f64) -> Result<PreprocessStats> {
    let (n, d) = images.shape();
    if n < 2 {
        return Err(Error::Domain(format!("ZCA needs at least 2 rows, got {n}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ZCA epsilon must be positive, got {epsilon}")));
    }
    let (mu, _) = axis_stats(images, Axis::Rows)?;
    let centered = center(images, &mu);
    let mut cov = matmul(&centered.transpose(), &centered)?;
    cov.scale(1.0 / n as f64);

    let cov = DMatrix::from_row_slice(d, d, cov.as_slice());
    let eig = SymmetricEigen::try_new(cov, 1e-14, 10_000)
        .ok_or_else(|| Error::Numeric("covariance eigendecomposition did not converge".into()))?;
    let scales: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / (l.max(0.0) + epsilon).sqrt())
        .collect();
    let e = &eig.eigenvectors;
    let mut w = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v: f64 = (0..d).map(|k| e[(i, k)] * scales[k] * e[(j, k)]).sum();
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    Ok(PreprocessStats {
        kind: PreprocessKind::Zca,
        mu,
        sigma: Vec::new(),
        zca_matrix: Some(w),
        epsilon,
    })
}

/// Centers with the fitted means and maps rows through the whitening matrix.
pub fn zca_apply(stats: &PreprocessStats, images: &Matrix) -> Result<Matrix> {
    let w = stats
        .zca_matrix
        .as_ref()
        .ok_or_else(|| Error::Contract("statistics carry no ZCA matrix".into()))?;
    if images.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "ZCA fitted on {} dims applied to {}",
            w.rows(),
            images.cols()
        )));
    }
    // W is symmetric, so row-vector x W equals (W x^T)^T.
    matmul(&center(images, &stats.mu), w)
}

fn center(m: &Matrix, mu: &[f64]) -> Matrix {
    let mut out = m.clone();
    let cols = out.cols();
    if cols > 0 {
        for row in out.as_mut_slice().chunks_exact_mut(cols) {
            row.iter_mut().zip(mu).for_each(|(v, m)| *v -= m);
        }
    }
    out
}

impl PreprocessStats {
    /// Applies this step to a feature matrix.
    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        match self.kind {
            PreprocessKind::Standardize => {
                if features.cols() != self.mu.len() {
                    return Err(Error::Shape(format!(
                        "standardization fitted on {} dims applied to {}",
                        self.mu.len(),
                        features.cols()
                    )));
                }
                let mut out = features.clone();
                let cols = out.cols();
                if cols > 0 {
                    for row in out.as_mut_slice().chunks_exact_mut(cols) {
                        for ((v, m), s) in row.iter_mut().zip(&self.mu).zip(&self.sigma) {
                            *v = (*v - m) / s.max(self.epsilon);
                        }
                    }
                }
                Ok(out)
            }
            PreprocessKind::Gcn => Ok(gcn(features)),
            PreprocessKind::Zca => zca_apply(self, features),
        }
    }

    fn write(&self, w: &mut Writer) -> Result<()> {
        w.u8(match self.kind {
            PreprocessKind::Standardize => 0,
            PreprocessKind::Gcn => 1,
            PreprocessKind::Zca => 2,
        });
        w.f64(self.epsilon);
        w.usize(self.mu.len())?;
        w.f64s(&self.mu);
        w.usize(self.sigma.len())?;
        w.f64s(&self.sigma);
        match &self.zca_matrix {
            Some(m) => {
                w.u8(1);
                w.usize(m.rows())?;
                w.f64s(m.as_slice());
            }
            None => w.u8(0),
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let kind = match r.u8()? {
            0 => PreprocessKind::Standardize,
            1 => PreprocessKind::Gcn,
            2 => PreprocessKind::Zca,
            k => return Err(Error::Format(format!("unknown preprocessing kind {k}"))),
        };
        let epsilon = r.f64()?;
        let n = r.usize()?;
        let mu = r.f64s(n)?;
        let n = r.usize()?;
        let sigma = r.f64s(n)?;
        let zca_matrix = match r.u8()? {
            0 => None,
            1 => {
                let d = r.usize()?;
                Some(Matrix::new(d, d, r.f64s(d * d)?)?)
            }
            f => return Err(Error::Format(format!("bad ZCA flag {f}"))),
        };
        if (kind == PreprocessKind::Zca) != zca_matrix.is_some() {
            return Err(Error::Format("ZCA matrix present iff kind is zca".into()));
        }
        Ok(Self {
            kind,
            mu,
            sigma,
            zca_matrix,
            epsilon,
        })
    }
}

/// Ordered preprocessing steps (e.g. GCN then ZCA).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pipeline {
    pub steps: Vec<PreprocessStats>,
}

impl Pipeline {
    /// Fits the named steps in order, each on the output of the previous one.
    pub fn fit(kinds: &[PreprocessKind], train: &Matrix, zca_epsilon: f64) -> Result<Self> {
        let mut steps = Vec::with_capacity(kinds.len());
        let mut current = train.clone();
        for &kind in kinds {
            let step = match kind {
                PreprocessKind::Standardize => {
                    let (mu, sigma) = axis_stats(&current, Axis::Rows)?;
                    PreprocessStats {
                        kind,
                        mu,
                        sigma,
                        zca_matrix: None,
                        epsilon: STD_FLOOR,
                    }
                }
                PreprocessKind::Gcn => PreprocessStats {
                    kind,
                    mu: Vec::new(),
                    sigma: Vec::new(),
                    zca_matrix: None,
                    epsilon: STD_FLOOR,
                },
                PreprocessKind::Zca => zca_fit(&current, zca_epsilon)?,
            };
            current = step.transform(&current)?;
            steps.push(step);
        }
        Ok(Self { steps })
    }

    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        let mut current = features.clone();
        for step in &self.steps {
            current = step.transform(&current)?;
        }
        Ok(current)
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        dataset.with_features(self.transform(&dataset.features)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::header(STATS_MAGIC);
        w.usize(self.steps.len())?;
        for s in &self.steps {
            s.write(&mut w)?;
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, STATS_MAGIC)?;
        let n = r.usize()?;
        let steps = (0..n).map(|_| PreprocessStats::read(&mut r)).collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { steps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_gaussian, RngStream};

    fn covariance(m: &Matrix) -> Matrix {
        let (mu, _) = axis_stats(m, Axis::Rows).unwrap();
        let c = center(m, &mu);
        let mut cov = matmul(&c.transpose(), &c).unwrap();
        cov.scale(1.0 / m.rows() as f64);
        cov
    }

    fn correlated(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed);
        let z = sample_gaussian(&mut rng, n, d, 0.0, 1.0).unwrap();
        let mix = sample_gaussian(&mut rng, d, d, 0.0, 1.0).unwrap();
        let mut x = matmul(&z, &mix).unwrap();
        for r in 0..n {
            for c in 0..d {
                x.set(r, c, x.get(r, c) + c as f64);
            }
        }
        x
    }

    #[test]
    fn standardize_examples() {
        let ds = Dataset::labeled(
            Matrix::from_rows(&[[2.0, 5.0], [4.0, 5.0]]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap();
        let (out, stats) = standardize(&ds).unwrap();
        assert_eq!(out.features.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(apply_stats(&stats, &ds).unwrap(), out);
    }

    #[test]
    fn standardized_columns_are_unit() {
        let x = correlated(200, 5, 1);
        let ds = Dataset::labeled(x, vec![0; 200], 1).unwrap();
        let (out, _) = standardize(&ds).unwrap();
        let (mean, std) = axis_stats(&out.features, Axis::Rows).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-9));
        assert!(std.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn dev_statistics_are_frozen() {
        let train = Dataset::labeled(correlated(100, 3, 2), vec![0; 100], 1).unwrap();
        let dev = Dataset::labeled(correlated(100, 3, 3), vec![0; 100], 1).unwrap();
        let (_, stats) = standardize(&train).unwrap();
        let out = apply_stats(&stats, &dev).unwrap();
        let (mean, _) = axis_stats(&out.features, Axis::Rows).unwrap();
        assert!(mean.iter().any(|m| m.abs() > 1e-6));
    }

    #[test]
    fn gcn_examples() {
        let m = Matrix::from_rows(&[[1.0, 3.0], [4.0, 4.0]]).unwrap();
        assert_eq!(gcn(&m).as_slice(), &[-1.0, 1.0, 0.0, 0.0]);
        let out = gcn(&correlated(30, 6, 4));
        let (mean, std) = axis_stats(&out, Axis::Cols).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        assert!(std.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn zca_of_white_data_is_near_identity() {
        let x = sample_gaussian(&mut RngStream::new(5), 20_000, 4, 0.0, 1.0).unwrap();
        let stats = zca_fit(&x, 1e-9).unwrap();
        let w = stats.zca_matrix.unwrap();
        assert!(w.max_abs_diff(&Matrix::identity(4)) < 0.05);
    }

    #[test]
    fn zca_whitens_and_is_symmetric() {
        let x = correlated(2000, 8, 6);
        let stats = zca_fit(&x, 1e-5).unwrap();
        let w = stats.zca_matrix.as_ref().unwrap();
        assert!(w.max_abs_diff(&w.transpose()) <= 1e-9);
        let white = zca_apply(&stats, &x).unwrap();
        assert_eq!(white.shape(), x.shape());
        assert!(covariance(&white).max_abs_diff(&Matrix::identity(8)) < 1e-3);
    }

    #[test]
    fn zca_rejects_degenerate_input() {
        assert!(matches!(zca_fit(&Matrix::zeros(1, 3), 1e-5), Err(Error::Domain(_))));
        assert!(matches!(zca_fit(&Matrix::zeros(4, 3), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn pipeline_sidecar_round_trip() {
        let x = correlated(300, 5, 7);
        let p = Pipeline::fit(&[PreprocessKind::Gcn, PreprocessKind::Zca], &x, 1e-5).unwrap();
        let back = Pipeline::from_bytes(&p.to_bytes().unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.transform(&x).unwrap(), p.transform(&x).unwrap());
        let s = Pipeline::fit(&[PreprocessKind::Standardize], &x, 1e-5).unwrap();
        assert_eq!(Pipeline::from_bytes(&s.to_bytes().unwrap()).unwrap(), s);
    }
}
