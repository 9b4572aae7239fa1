//! Teacher-side pipeline: logit extraction, ensemble averaging, target
//! normalization and transfer-set construction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_matrix_csv, save_matrix_csv, Dataset, TargetScale, STD_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{axis_stats, Axis, Matrix};
use crate::nn::Model;
use crate::optim::EVAL_BATCH;

/// Teacher logits plus the column statistics needed to undo normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTargets {
    pub logits: Matrix,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub normalized: bool,
}

impl LogitTargets {
    pub fn scale(&self) -> TargetScale {
        TargetScale {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
        }
    }

    /// Raw logits, undoing normalization when it was applied.
    pub fn raw(&self) -> Matrix {
        if self.normalized {
            self.scale().denormalize(&self.logits)
        } else {
            self.logits.clone()
        }
    }
}

/// Averages the logits of several teachers.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<Model>,
}

impl EnsembleModel {
    pub fn new(members: Vec<Model>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Contract("ensemble needs at least one member".into()))?;
        let (d, c) = (first.input_size(), first.output_dim());
        if let Some(bad) = members.iter().find(|m| m.output_dim() != c || m.input_size() != d) {
            return Err(Error::Contract(format!(
                "ensemble member maps {}->{}, expected {d}->{c}",
                bad.input_size(),
                bad.output_dim()
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Anything that can label a transfer set with logits.
pub trait Teacher {
    fn input_size(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn logits(&self, features: &Matrix) -> Result<Matrix>;
    /// Hex SHA-256 identifying the teacher's serialized form.
    fn fingerprint(&self) -> Result<String>;
}

impl Teacher for Model {
    fn input_size(&self) -> usize {
        Model::input_size(self)
    }

    fn output_dim(&self) -> usize {
        Model::output_dim(self)
    }

    fn logits(&self, features: &Matrix) -> Result<Matrix> {
        extract_logits(self, features)
    }

    fn fingerprint(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_bytes()?)))
    }
}

impl Teacher for EnsembleModel {
    fn input_size(&self) -> usize {
        self.members[0].input_size()
    }

    fn output_dim(&self) -> usize {
        self.members[0].output_dim()
    }

    fn logits(&self, features: &Matrix) -> Result<Matrix> {
        ensemble_logits(self, features)
    }

    fn fingerprint(&self) -> Result<String> {
        if let [single] = self.members.as_slice() {
            return single.fingerprint();
        }
        let mut h = Sha256::new();
        for m in &self.members {
            h.update(m.fingerprint()?.as_bytes());
        }
        Ok(hex(&h.finalize()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Eval-mode logits of `teacher`, computed in chunks of `EVAL_BATCH` rows.
pub fn extract_logits(teacher: &Model, features: &Matrix) -> Result<Matrix> {
    extract_logits_batched(teacher, features, EVAL_BATCH)
}

/// [`extract_logits`] with an explicit chunk size. The result does not
/// depend on `batch`.
pub fn extract_logits_batched(teacher: &Model, features: &Matrix, batch: usize) -> Result<Matrix> {
    if features.cols() != teacher.input_size() {
        return Err(Error::Shape(format!(
            "features have {} columns, teacher expects {}",
            features.cols(),
            teacher.input_size()
        )));
    }
    let batch = batch.max(1);
    let n = features.rows();
    let c = teacher.output_dim();
    let mut out = Vec::with_capacity(n * c);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        out.extend_from_slice(teacher.predict(&features.slice_rows(start, end))?.as_slice());
        start = end;
    }
    Ok(Matrix::from_vec_unchecked(n, c, out))
}

/// Elementwise mean of the members' logits.
pub fn ensemble_logits(ensemble: &EnsembleModel, features: &Matrix) -> Result<Matrix> {
    let mut members = ensemble.members.iter();
    let first = members
        .next()
        .ok_or_else(|| Error::Contract("ensemble needs at least one member".into()))?;
    let mut sum = extract_logits(first, features)?;
    for m in members {
        let z = extract_logits(m, features)?;
        sum.as_mut_slice()
            .iter_mut()
            .zip(z.as_slice())
            .for_each(|(s, v)| *s += v);
    }
    let k = ensemble.len() as f64;
    Ok(sum.map(|v| v / k))
}

/// Column statistics of `raw` without changing it.
pub fn raw_targets(raw: Matrix) -> Result<LogitTargets> {
    let (mu, sigma) = axis_stats(&raw, Axis::Rows)?;
    Ok(LogitTargets {
        logits: raw,
        mu,
        sigma,
        normalized: false,
    })
}

/// Per-column `(x - mu) / max(sigma, 1e-8)`.
pub fn normalize_logits(raw: &Matrix) -> Result<LogitTargets> {
    let (mu, sigma) = axis_stats(raw, Axis::Rows)?;
    let sigma: Vec<f64> = sigma.into_iter().map(|s| s.max(STD_FLOOR)).collect();
    let mut logits = raw.clone();
    let cols = logits.cols();
    for row in logits.as_mut_slice().chunks_exact_mut(cols) {
        for ((v, m), s) in row.iter_mut().zip(&mu).zip(&sigma) {
            *v = (*v - m) / s;
        }
    }
    Ok(LogitTargets {
        logits,
        mu,
        sigma,
        normalized: true,
    })
}

pub fn denormalize_logits(targets: &LogitTargets) -> Matrix {
    targets.raw()
}

/// Labeled features (labels dropped) followed by the unlabeled pool, with
/// teacher logits as soft targets.
pub fn build_transfer_set(
    labeled: &Dataset,
    unlabeled: &Matrix,
    teacher: &dyn Teacher,
    normalize: bool,
) -> Result<Dataset> {
    let d = labeled.dim();
    if d != teacher.input_size() {
        return Err(Error::Shape(format!(
            "labeled set has {d} features, teacher expects {}",
            teacher.input_size()
        )));
    }
    let features = if unlabeled.rows() == 0 {
        labeled.features.clone()
    } else {
        if unlabeled.cols() != d {
            return Err(Error::Shape(format!(
                "unlabeled pool has {} features, labeled set has {d}",
                unlabeled.cols()
            )));
        }
        labeled.features.vstack(unlabeled)?
    };
    let raw = teacher.logits(&features)?;
    let targets = if normalize {
        normalize_logits(&raw)?
    } else {
        raw_targets(raw)?
    };
    transfer_dataset(features, &targets, labeled.input_shape)
}

fn transfer_dataset(
    features: Matrix,
    targets: &LogitTargets,
    input_shape: Option<crate::nn::ImageShape>,
) -> Result<Dataset> {
    let classes = targets.logits.cols();
    let mut ds = Dataset::new(features, None, Some(targets.logits.clone()), classes)?;
    ds.input_shape = input_shape;
    if targets.normalized {
        ds.target_scale = Some(targets.scale());
    }
    ds.validate()?;
    Ok(ds)
}

pub const TRANSFER_FEATURES: &str = "features.csv";
pub const TRANSFER_TARGETS: &str = "targets.csv";
pub const TRANSFER_HEADER: &str = "header.toml";

/// Metadata stored next to a persisted transfer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferHeader {
    pub version: u32,
    pub classes: usize,
    pub rows: usize,
    pub normalized: bool,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub teacher_sha256: String,
}

/// Writes `features.csv`, `targets.csv` and `header.toml` into `dir`.
pub fn save_transfer_set(dir: impl AsRef<Path>, transfer: &Dataset, teacher_sha256: &str) -> Result<()> {
    let dir = dir.as_ref();
    let targets = transfer
        .soft_targets
        .as_ref()
        .ok_or_else(|| Error::Contract("transfer set has no soft targets".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (mu, sigma, normalized) = match &transfer.target_scale {
        Some(s) => (s.mu.clone(), s.sigma.clone(), true),
        None => {
            let (mu, sigma) = axis_stats(targets, Axis::Rows)?;
            (mu, sigma, false)
        }
    };
    let header = TransferHeader {
        version: 1,
        classes: transfer.class_count,
        rows: transfer.len(),
        normalized,
        mu,
        sigma,
        teacher_sha256: teacher_sha256.to_string(),
    };
    save_matrix_csv(dir.join(TRANSFER_FEATURES), &transfer.features, "f")?;
    save_matrix_csv(dir.join(TRANSFER_TARGETS), targets, "z")?;
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(TRANSFER_HEADER);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a transfer set written by [`save_transfer_set`].
pub fn load_transfer_set(dir: impl AsRef<Path>) -> Result<(Dataset, TransferHeader)> {
    let dir = dir.as_ref();
    let path = dir.join(TRANSFER_HEADER);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: TransferHeader =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let features = load_matrix_csv(dir.join(TRANSFER_FEATURES))?;
    let logits = load_matrix_csv(dir.join(TRANSFER_TARGETS))?;
    if logits.cols() != header.classes || logits.rows() != header.rows || features.rows() != header.rows {
        return Err(Error::Format(format!(
            "transfer set in {} disagrees with its header",
            dir.display()
        )));
    }
    if header.mu.len() != header.classes || header.sigma.len() != header.classes {
        return Err(Error::Format("header statistics have the wrong width".into()));
    }
    let targets = LogitTargets {
        logits,
        mu: header.mu.clone(),
        sigma: header.sigma.clone(),
        normalized: header.normalized,
    };
    Ok((transfer_dataset(features, &targets, None)?, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, softmax_rows, LayerSpec, NetworkSpec, Param, Shape};
    use crate::numerics::{sample_gaussian, RngStream};
    use proptest::prelude::*;

    fn identity_teacher(d: usize) -> Model {
        let spec = NetworkSpec::new(Shape::Flat(d), vec![LayerSpec::linear(d, d)], d).unwrap();
        Model::from_parts(
            spec,
            vec![Some(Param {
                weight: Matrix::identity(d),
                bias: Some(vec![0.0; d]),
            })],
        )
        .unwrap()
    }

    fn bias_teacher(bias: [f64; 2]) -> Model {
        let spec = NetworkSpec::new(Shape::Flat(1), vec![LayerSpec::linear(1, 2)], 2).unwrap();
        Model::from_parts(
            spec,
            vec![Some(Param {
                weight: Matrix::zeros(2, 1),
                bias: Some(bias.to_vec()),
            })],
        )
        .unwrap()
    }

    fn random_teacher(seed: u64) -> Model {
        let spec = NetworkSpec::mlp(6, &[9, 7], 4, 0.5).unwrap();
        init_params(&spec, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn identity_teacher_returns_inputs() {
        let x = sample_gaussian(&mut RngStream::new(1), 7, 3, 0.0, 2.0).unwrap();
        assert_eq!(extract_logits(&identity_teacher(3), &x).unwrap(), x);
    }

    #[test]
    fn extracted_softmax_matches_prediction() {
        let t = random_teacher(2);
        let x = sample_gaussian(&mut RngStream::new(3), 10, 6, 0.0, 1.0).unwrap();
        let p = softmax_rows(&extract_logits(&t, &x).unwrap());
        let q = softmax_rows(&t.predict(&x).unwrap());
        assert_eq!(p, q);
    }

    #[test]
    fn batching_is_bit_identical() {
        let t = random_teacher(4);
        let x = sample_gaussian(&mut RngStream::new(5), 77, 6, 0.0, 1.0).unwrap();
        let a = extract_logits_batched(&t, &x, 32).unwrap();
        let b = extract_logits_batched(&t, &x, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extract_shape_error() {
        let x = Matrix::zeros(2, 5);
        assert!(matches!(extract_logits(&random_teacher(1), &x), Err(Error::Shape(_))));
    }

    #[test]
    fn ensemble_mean_by_hand() {
        let ens = EnsembleModel::new(vec![bias_teacher([1.0, 3.0]), bias_teacher([3.0, 5.0])]).unwrap();
        let z = ensemble_logits(&ens, &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(z.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn ensemble_singleton_and_identical_members() {
        let t = random_teacher(6);
        let x = sample_gaussian(&mut RngStream::new(7), 12, 6, 0.0, 1.0).unwrap();
        let single = extract_logits(&t, &x).unwrap();
        let one = EnsembleModel::new(vec![t.clone()]).unwrap();
        assert_eq!(ensemble_logits(&one, &x).unwrap(), single);
        let three = EnsembleModel::new(vec![t.clone(), t.clone(), t]).unwrap();
        assert!(ensemble_logits(&three, &x).unwrap().max_abs_diff(&single) < 1e-12);
    }

    #[test]
    fn ensemble_equals_mean_of_members() {
        let members: Vec<Model> = (0..4).map(random_teacher).collect();
        let x = sample_gaussian(&mut RngStream::new(8), 15, 6, 0.0, 1.0).unwrap();
        let ens = EnsembleModel::new(members.clone()).unwrap();
        let got = ensemble_logits(&ens, &x).unwrap();
        let per: Vec<Matrix> = members.iter().map(|m| extract_logits(m, &x).unwrap()).collect();
        for i in 0..got.as_slice().len() {
            let mean = per.iter().map(|m| m.as_slice()[i]).sum::<f64>() / 4.0;
            assert!((got.as_slice()[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_or_mismatched_ensembles_rejected() {
        assert!(matches!(EnsembleModel::new(vec![]), Err(Error::Contract(_))));
        assert!(matches!(
            EnsembleModel::new(vec![random_teacher(1), identity_teacher(4)]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn normalize_by_hand() {
        let raw = Matrix::from_rows(&[[1.0, 3.0], [3.0, 5.0]]).unwrap();
        let t = normalize_logits(&raw).unwrap();
        assert_eq!(t.logits.as_slice(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!((t.mu.as_slice(), t.sigma.as_slice()), (&[2.0, 4.0][..], &[1.0, 1.0][..]));
        assert!(t.normalized);
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let raw = Matrix::from_rows(&[[7.0, 1.0], [7.0, 2.0], [7.0, 4.0]]).unwrap();
        let t = normalize_logits(&raw).unwrap();
        assert!(t.logits.row_iter().all(|r| r[0] == 0.0));
        assert!(t.raw().max_abs_diff(&raw) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn normalization_stats_and_round_trip(seed in any::<u64>(), n in 2usize..40, c in 1usize..6) {
            let mut rng = RngStream::new(seed);
            let raw = sample_gaussian(&mut rng, n, c, 3.0, 5.0).unwrap();
            let t = normalize_logits(&raw).unwrap();
            let (mean, std) = axis_stats(&t.logits, Axis::Rows).unwrap();
            for j in 0..c {
                prop_assert!(mean[j].abs() < 1e-9);
                prop_assert!((std[j] - 1.0).abs() < 1e-9);
            }
            prop_assert!(denormalize_logits(&t).max_abs_diff(&raw) < 1e-12);
        }
    }

    fn labeled(n: usize, d: usize, seed: u64) -> Dataset {
        let x = sample_gaussian(&mut RngStream::new(seed), n, d, 0.0, 1.0).unwrap();
        Dataset::labeled(x, (0..n).map(|i| i % 4).collect(), 4).unwrap()
    }

    #[test]
    fn transfer_set_sizes_and_targets() {
        let t = random_teacher(9);
        let lab = labeled(50, 6, 10);
        let pool = sample_gaussian(&mut RngStream::new(11), 100, 6, 0.0, 1.0).unwrap();
        let ts = build_transfer_set(&lab, &pool, &t, false).unwrap();
        assert_eq!(ts.len(), 150);
        assert!(ts.hard_labels.is_none());
        assert_eq!(ts.soft_targets.as_ref().unwrap().cols(), 4);
        let expect = extract_logits(&t, &lab.features.vstack(&pool).unwrap()).unwrap();
        assert_eq!(ts.soft_targets.as_ref().unwrap(), &expect);
    }

    #[test]
    fn empty_pool_relabels_train_set() {
        let t = random_teacher(12);
        let lab = labeled(30, 6, 13);
        let ts = build_transfer_set(&lab, &Matrix::zeros(0, 6), &t, true).unwrap();
        assert_eq!(ts.len(), 30);
        assert_eq!(ts.features, lab.features);
        let scale = ts.target_scale.as_ref().unwrap();
        let raw = scale.denormalize(ts.soft_targets.as_ref().unwrap());
        assert!(raw.max_abs_diff(&extract_logits(&t, &lab.features).unwrap()) < 1e-12);
    }

    #[test]
    fn transfer_width_mismatch() {
        let t = random_teacher(1);
        let lab = labeled(5, 6, 1);
        assert!(matches!(
            build_transfer_set(&lab, &Matrix::zeros(3, 5), &t, false),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            build_transfer_set(&labeled(5, 3, 1), &Matrix::zeros(0, 3), &t, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fingerprints_distinguish_teachers() {
        let a = random_teacher(1);
        let b = random_teacher(2);
        assert_eq!(a.fingerprint().unwrap().len(), 64);
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let ens = EnsembleModel::new(vec![a.clone()]).unwrap();
        assert_eq!(ens.fingerprint().unwrap(), a.fingerprint().unwrap());
    }

    #[test]
    fn transfer_set_persists_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let t = random_teacher(3);
        let lab = labeled(20, 6, 4);
        let pool = sample_gaussian(&mut RngStream::new(5), 10, 6, 0.0, 1.0).unwrap();
        for normalize in [false, true] {
            let ts = build_transfer_set(&lab, &pool, &t, normalize).unwrap();
            let sub = dir.path().join(format!("n{normalize}"));
            save_transfer_set(&sub, &ts, &t.fingerprint().unwrap()).unwrap();
            let (back, header) = load_transfer_set(&sub).unwrap();
            assert_eq!(back, ts);
            assert_eq!(header.normalized, normalize);
            assert_eq!(header.teacher_sha256, t.fingerprint().unwrap());
        }
    }
}
