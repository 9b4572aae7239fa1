//! In-memory building blocks shared by the sub-commands: data preparation,
//! teacher training, direct and mimic students, and scoring.

use crate::data::{load_csv, load_matrix_csv, make_synthetic, Dataset, Pipeline};
use crate::distill::{build_transfer_set, EnsembleModel, Teacher};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::nn::{init_params, Model, NetworkSpec};
use crate::numerics::{derive_seed, Matrix, RngStream};
use crate::optim::{evaluate, train, train_with_observer, MetricsRecord};

use super::config::ExperimentConfig;

// Stream ids under a run seed.
const INIT: u64 = 1;
const SHUFFLE: u64 = 2;
const BOOTSTRAP: u64 = 3;

/// Preprocessed splits; features are already mapped through `pipeline`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub unlabeled: Matrix,
    pub pipeline: Pipeline,
}

impl Prepared {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn classes(&self) -> usize {
        self.train.class_count
    }
}

/// Loads or generates the four splits and fits preprocessing on train (or
/// train plus pool when `data.fit_on_pool` is set).
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (train, dev, test, unlabeled) = match cfg.data.source.as_str() {
        "synthetic" => {
            let s = make_synthetic(&cfg.synthetic.spec(), cfg.synthetic.seed)?;
            (s.train, s.dev, s.test, s.unlabeled)
        }
        "csv" => {
            let col = cfg.label_column();
            let c = cfg.data.classes;
            let train = load_csv(&cfg.data.train, &col, c)?;
            let dev = load_csv(&cfg.data.dev, &col, c)?;
            let test = load_csv(&cfg.data.test, &col, c)?;
            let pool = if cfg.data.unlabeled.is_empty() {
                Matrix::zeros(0, train.dim())
            } else {
                load_matrix_csv(&cfg.data.unlabeled)?
            };
            for (name, d) in [("dev", dev.dim()), ("test", test.dim())] {
                if d != train.dim() {
                    return Err(Error::Shape(format!("{name} has {d} features, train has {}", train.dim())));
                }
            }
            if pool.rows() > 0 && pool.cols() != train.dim() {
                return Err(Error::Shape(format!(
                    "unlabeled pool has {} features, train has {}",
                    pool.cols(),
                    train.dim()
                )));
            }
            (train, dev, test, pool)
        }
        other => return Err(Error::Config(format!("unknown data source {other:?}"))),
    };
    let fit_rows = if cfg.data.fit_on_pool && unlabeled.rows() > 0 {
        train.features.vstack(&unlabeled)?
    } else {
        train.features.clone()
    };
    let pipeline = Pipeline::fit(&cfg.preprocess_kinds()?, &fit_rows, cfg.data.zca_epsilon)?;
    let unlabeled = if unlabeled.rows() > 0 {
        pipeline.transform(&unlabeled)?
    } else {
        Matrix::zeros(0, train.dim())
    };
    Ok(Prepared {
        train: pipeline.apply(&train)?,
        dev: pipeline.apply(&dev)?,
        test: pipeline.apply(&test)?,
        unlabeled,
        pipeline,
    })
}

pub fn teacher_spec(cfg: &ExperimentConfig, data: &Prepared) -> Result<NetworkSpec> {
    NetworkSpec::mlp(data.dim(), &cfg.teacher.hidden, data.classes(), cfg.teacher.dropout)
}

/// Shallow student of the given non-linear width, with the configured
/// bottleneck.
pub fn student_spec(cfg: &ExperimentConfig, data: &Prepared, width: usize) -> Result<NetworkSpec> {
    let k = (cfg.student.bottleneck > 0).then_some(cfg.student.bottleneck);
    NetworkSpec::shallow(data.dim(), width, k, data.classes(), cfg.student.dropout)
}

fn fresh(spec: &NetworkSpec, seed: u64) -> Result<Model> {
    init_params(spec, &mut RngStream::new(derive_seed(seed, INIT)))
}

/// One teacher for `seed`, optionally on a bootstrap resample. `observer`
/// sees every epoch (used for checkpoint ladders).
pub fn train_teacher(
    cfg: &ExperimentConfig,
    data: &Prepared,
    seed: u64,
    observer: impl FnMut(&MetricsRecord, &Model),
) -> Result<(Model, Vec<MetricsRecord>)> {
    let spec = teacher_spec(cfg, data)?;
    let init = fresh(&spec, seed)?;
    let train_set = if cfg.teacher.bootstrap {
        data.train.bootstrap(&mut RngStream::new(derive_seed(seed, BOOTSTRAP)))
    } else {
        data.train.clone()
    };
    train_with_observer(
        &init,
        &train_set,
        &data.dev,
        &cfg.teacher_train(derive_seed(seed, SHUFFLE)),
        observer,
    )
}

/// Seeds of the members of the ensemble trained for run seed `seed`.
pub fn member_seeds(seed: u64, members: usize) -> Vec<u64> {
    (0..members as u64).map(|i| derive_seed(seed, 100 + i)).collect()
}

/// `count` teachers for run `seed`, plus snapshots of the first member
/// after each epoch listed in `checkpoints`.
/// Snapshots of one model taken after the given epochs.
pub type Checkpoints = Vec<(usize, Model)>;

pub fn train_members(
    cfg: &ExperimentConfig,
    data: &Prepared,
    seed: u64,
    count: usize,
    checkpoints: &[usize],
) -> Result<(Vec<Model>, Checkpoints)> {
    let mut snapshots = Vec::new();
    let mut members = Vec::with_capacity(count);
    for (i, s) in member_seeds(seed, count).into_iter().enumerate() {
        let (m, _) = train_teacher(cfg, data, s, |rec, model| {
            if i == 0 && checkpoints.contains(&rec.epoch) {
                snapshots.push((rec.epoch, model.clone()));
            }
        })?;
        members.push(m);
    }
    Ok((members, snapshots))
}

/// `teacher.members` teachers for `seed`, averaged.
pub fn train_ensemble(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<EnsembleModel> {
    EnsembleModel::new(train_members(cfg, data, seed, cfg.teacher.members, &[])?.0)
}

/// Teacher-quality ladder for run `seed`, in configured order: `e{N}` is the
/// first member after N epochs, `k{K}` the ensemble of the first K fully
/// trained members. Checkpoints come from the same run as member 0.
pub fn teacher_ladder(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<Vec<(String, EnsembleModel)>> {
    let epochs = &cfg.sweep.ladder_epochs;
    let most = cfg.sweep.ensemble_sizes.iter().copied().max().unwrap_or(0);
    let (members, snapshots) = if most > 0 {
        train_members(cfg, data, seed, most, epochs)?
    } else {
        let mut short = cfg.clone();
        short.teacher.epochs = epochs.iter().copied().max().unwrap_or(0);
        train_members(&short, data, seed, 1, epochs)?
    };
    ladder_from(cfg, &members, &snapshots)
}

/// Assembles ladder rungs from already trained members and snapshots.
pub fn ladder_from(
    cfg: &ExperimentConfig,
    members: &[Model],
    snapshots: &[(usize, Model)],
) -> Result<Vec<(String, EnsembleModel)>> {
    let mut rungs = Vec::new();
    for &e in &cfg.sweep.ladder_epochs {
        let (_, m) = snapshots
            .iter()
            .find(|(epoch, _)| *epoch == e)
            .ok_or_else(|| Error::Contract(format!("no checkpoint at epoch {e}")))?;
        rungs.push((format!("e{e}"), EnsembleModel::new(vec![m.clone()])?));
    }
    for &k in &cfg.sweep.ensemble_sizes {
        if k > members.len() {
            return Err(Error::Contract(format!("ladder needs {k} members, have {}", members.len())));
        }
        rungs.push((format!("k{k}"), EnsembleModel::new(members[..k].to_vec())?));
    }
    Ok(rungs)
}

/// A shallow net trained directly on hard labels.
pub fn train_direct(
    cfg: &ExperimentConfig,
    data: &Prepared,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<(Model, Vec<MetricsRecord>)> {
    let init = fresh(spec, seed)?;
    train(
        &init,
        &data.train,
        &data.dev,
        &cfg.student_train(derive_seed(seed, SHUFFLE), LossKind::CrossEntropyHard),
    )
}

/// Transfer set for `teacher`: train features plus, when `student.use_pool`
/// is set, the unlabeled pool.
pub fn transfer_set(cfg: &ExperimentConfig, data: &Prepared, teacher: &dyn Teacher, loss: LossKind) -> Result<Dataset> {
    if teacher.input_size() != data.dim() || teacher.output_dim() != data.classes() {
        return Err(Error::Config(format!(
            "teacher maps {}->{}, data has {} features and {} classes",
            teacher.input_size(),
            teacher.output_dim(),
            data.dim(),
            data.classes()
        )));
    }
    let pool = if cfg.student.use_pool {
        data.unlabeled.clone()
    } else {
        Matrix::zeros(0, data.dim())
    };
    build_transfer_set(&data.train, &pool, teacher, cfg.normalize_for(loss)?)
}

/// A student regressing the transfer set's targets. Dev metrics use hard
/// labels; the returned model emits raw (denormalized) logits.
pub fn train_mimic(
    cfg: &ExperimentConfig,
    data: &Prepared,
    transfer: &Dataset,
    spec: &NetworkSpec,
    loss: LossKind,
    seed: u64,
) -> Result<(Model, Vec<MetricsRecord>)> {
    let init = fresh(spec, seed)?;
    train(&init, transfer, &data.dev, &cfg.student_train(derive_seed(seed, SHUFFLE), loss))
}

/// Dev and test error of a single model.
pub fn errors(model: &Model, data: &Prepared) -> Result<(f64, f64)> {
    Ok((evaluate(model, &data.dev)?, evaluate(model, &data.test)?))
}

/// Dev and test error of a teacher's argmax logits.
pub fn teacher_errors(teacher: &dyn Teacher, data: &Prepared) -> Result<(f64, f64)> {
    let err = |d: &Dataset| -> Result<f64> {
        let z = teacher.logits(&d.features)?;
        Ok(crate::optim::error_rate(&z, d.hard_labels.as_deref().expect("labeled split")))
    };
    Ok((err(&data.dev)?, err(&data.test)?))
}
