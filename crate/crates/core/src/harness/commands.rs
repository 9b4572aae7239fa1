//! The sub-commands. Each one validates its configuration, runs every seed
//! in order and writes its outputs under the output directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::load_csv;
use crate::data::{format_real, Pipeline};
use crate::distill::{save_transfer_set, EnsembleModel, Teacher};
use crate::error::{Error, Result};
use crate::nn::{absorb_bottleneck, argmax, Model, NetworkSpec};
use crate::optim::{evaluate, predict_all, write_metrics_csv, MetricsRecord};

use super::config::ExperimentConfig;
use super::pipeline::{
    errors, prepare, student_spec, teacher_errors, train_direct, train_ensemble, train_mimic, train_teacher,
    transfer_set, teacher_ladder, Prepared,
};
use super::Command;

pub const SWEEP_HEADER: &str = "model_id,params,hidden_units,regime,dev_error,test_error,teacher_error";
pub const PREPROCESS_FILE: &str = "preprocess.smps";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Trained on hard labels.
    Direct,
    /// Trained on teacher logits.
    Mimic,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Direct => "direct",
            Regime::Mimic => "mimic",
        })
    }
}

/// One line of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model_id: String,
    pub params: usize,
    /// Non-linear and linear (bottleneck) hidden units.
    pub hidden_units: (usize, usize),
    pub regime: Regime,
    pub dev_error: f64,
    pub test_error: f64,
    pub teacher_error: Option<f64>,
}

impl SweepRow {
    fn new(id: String, spec: &NetworkSpec, regime: Regime, errs: (f64, f64), teacher_error: Option<f64>) -> Self {
        Self {
            model_id: id,
            params: spec.param_count(),
            hidden_units: spec.hidden_units(),
            regime,
            dev_error: errs.0,
            test_error: errs.1,
            teacher_error,
        }
    }
}

/// Hidden units as `N`, or `N+KL` when there are `K` linear units.
pub fn format_hidden_units((nonlinear, linear): (usize, usize)) -> String {
    if linear == 0 {
        nonlinear.to_string()
    } else {
        format!("{nonlinear}+{linear}L")
    }
}

pub fn parse_hidden_units(s: &str) -> Option<(usize, usize)> {
    match s.split_once('+') {
        None => Some((s.parse().ok()?, 0)),
        Some((n, k)) => Some((n.parse().ok()?, k.strip_suffix('L')?.parse().ok()?)),
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model_id,
            r.params,
            format_hidden_units(r.hidden_units),
            r.regime,
            format_real(r.dev_error),
            format_real(r.test_error),
            r.teacher_error.map(format_real).unwrap_or_default()
        ));
    }
    out
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(Error::Format(format!("{} is not a sweep CSV", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Ingest {
                row: i + 2,
                reason: format!("malformed sweep row {line:?}"),
            };
            let cells: Vec<&str> = line.split(',').collect();
            let [id, params, hidden, regime, dev, test, teacher] = cells[..] else {
                return Err(bad());
            };
            Ok(SweepRow {
                model_id: id.to_string(),
                params: params.parse().map_err(|_| bad())?,
                hidden_units: parse_hidden_units(hidden).ok_or_else(bad)?,
                regime: match regime {
                    "direct" => Regime::Direct,
                    "mimic" => Regime::Mimic,
                    _ => return Err(bad()),
                },
                dev_error: dev.parse().map_err(|_| bad())?,
                test_error: test.parse().map_err(|_| bad())?,
                teacher_error: if teacher.is_empty() {
                    None
                } else {
                    Some(teacher.parse().map_err(|_| bad())?)
                },
            })
        })
        .collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

struct Out {
    dir: PathBuf,
    record_time: bool,
}

impl Out {
    fn new(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("config.toml"), &cfg.to_toml())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            record_time: cfg.run.record_time,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn model(&self, name: &str, model: &Model, metrics: &[MetricsRecord]) -> Result<()> {
        model.save(self.path(&format!("{name}.smim")))?;
        write_metrics_csv(self.path(&format!("{name}.metrics.csv")), metrics, self.record_time)
    }

    fn prepared(&self, data: &Prepared) -> Result<()> {
        data.pipeline.save(self.path(PREPROCESS_FILE))
    }

    fn sweep(&self, name: &str, rows: &[SweepRow]) -> Result<()> {
        write(&self.path(name), &sweep_csv(rows))
    }
}

/// `train-teacher`: one teacher per seed, plus an `ensemble` row when
/// there are several seeds.
pub fn train_teachers(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate(Command::TrainTeacher)?;
    let data = prepare(cfg)?;
    let out = Out::new(out, cfg)?;
    out.prepared(&data)?;
    let spec = super::pipeline::teacher_spec(cfg, &data)?;
    let mut rows = Vec::new();
    let mut members = Vec::new();
    for &seed in &cfg.run.seeds {
        let (model, metrics) = train_teacher(cfg, &data, seed, |_, _| {})?;
        let id = format!("teacher_s{seed}");
        out.model(&id, &model, &metrics)?;
        rows.push(SweepRow::new(id, &spec, Regime::Direct, errors(&model, &data)?, None));
        members.push(model);
    }
    if members.len() > 1 {
        let k = members.len();
        let ens = EnsembleModel::new(members)?;
        let mut row = SweepRow::new("ensemble".into(), &spec, Regime::Direct, teacher_errors(&ens, &data)?, None);
        row.params *= k;
        row.hidden_units.0 *= k;
        rows.push(row);
    }
    out.sweep("teachers.csv", &rows)?;
    Ok(rows)
}

/// `train-baseline`: the shallow student spec trained on hard labels.
pub fn train_baselines(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate(Command::TrainBaseline)?;
    let data = prepare(cfg)?;
    let out = Out::new(out, cfg)?;
    out.prepared(&data)?;
    let spec = student_spec(cfg, &data, cfg.student.hidden)?;
    let mut rows = Vec::new();
    for &seed in &cfg.run.seeds {
        let (model, metrics) = train_direct(cfg, &data, &spec, seed)?;
        let id = format!("baseline_s{seed}");
        out.model(&id, &model, &metrics)?;
        rows.push(SweepRow::new(id, &spec, Regime::Direct, errors(&model, &data)?, None));
    }
    out.sweep("baseline.csv", &rows)?;
    Ok(rows)
}

/// Loads `distill.teachers`, or trains an ensemble from the `teacher`
/// section with the first run seed and saves its members.
fn fixed_teacher(cfg: &ExperimentConfig, data: &Prepared, out: &Out) -> Result<EnsembleModel> {
    if cfg.distill.teachers.is_empty() {
        let ens = train_ensemble(cfg, data, cfg.run.seeds[0])?;
        for (i, m) in ens.members().iter().enumerate() {
            m.save(out.path(&format!("teacher_m{i}.smim")))?;
        }
        return Ok(ens);
    }
    let members = cfg
        .distill
        .teachers
        .iter()
        .map(Model::load)
        .collect::<Result<Vec<_>>>()?;
    for (path, m) in cfg.distill.teachers.iter().zip(&members) {
        if m.input_size() != data.dim() || m.output_dim() != data.classes() {
            return Err(Error::Config(format!(
                "teacher {path} maps {}->{}, data has {} features and {} classes",
                m.input_size(),
                m.output_dim(),
                data.dim(),
                data.classes()
            )));
        }
    }
    EnsembleModel::new(members).map_err(|e| Error::Config(e.to_string()))
}

/// `distill`: one transfer set from the fixed teacher, one student per seed.
pub fn distill(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate(Command::Distill)?;
    let loss = cfg.loss()?;
    let data = prepare(cfg)?;
    let out = Out::new(out, cfg)?;
    out.prepared(&data)?;
    let teacher = fixed_teacher(cfg, &data, &out)?;
    let teacher_test = teacher_errors(&teacher, &data)?.1;
    let transfer = transfer_set(cfg, &data, &teacher, loss)?;
    save_transfer_set(out.subdir("transfer")?, &transfer, &teacher.fingerprint()?)?;
    let spec = student_spec(cfg, &data, cfg.student.hidden)?;
    let mut rows = Vec::new();
    for &seed in &cfg.run.seeds {
        let (model, metrics) = train_mimic(cfg, &data, &transfer, &spec, loss, seed)?;
        let id = format!("student_s{seed}");
        out.model(&id, &model, &metrics)?;
        rows.push(SweepRow::new(id, &spec, Regime::Mimic, errors(&model, &data)?, Some(teacher_test)));
    }
    out.sweep("distill.csv", &rows)?;
    Ok(rows)
}

/// `sweep-params`: for every seed and width, a direct and a mimic student
/// with the same spec and initialization.
pub fn sweep_params(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate(Command::SweepParams)?;
    let loss = cfg.loss()?;
    let data = prepare(cfg)?;
    let out = Out::new(out, cfg)?;
    out.prepared(&data)?;
    let teacher = fixed_teacher(cfg, &data, &out)?;
    let teacher_test = teacher_errors(&teacher, &data)?.1;
    let transfer = transfer_set(cfg, &data, &teacher, loss)?;
    let models = out.subdir("models")?;
    let mut rows = Vec::new();
    for &seed in &cfg.run.seeds {
        for &width in &cfg.sweep.widths {
            let spec = student_spec(cfg, &data, width)?;
            let direct = train_direct(cfg, &data, &spec, seed)?;
            let mimic = train_mimic(cfg, &data, &transfer, &spec, loss, seed)?;
            for (regime, (model, metrics), teacher_error) in [
                (Regime::Direct, direct, None),
                (Regime::Mimic, mimic, Some(teacher_test)),
            ] {
                let id = format!("w{width}_{regime}_s{seed}");
                model.save(models.join(format!("{id}.smim")))?;
                write_metrics_csv(models.join(format!("{id}.metrics.csv")), &metrics, out.record_time)?;
                rows.push(SweepRow::new(id, &spec, regime, errors(&model, &data)?, teacher_error));
            }
        }
    }
    out.sweep("sweep_params.csv", &rows)?;
    Ok(rows)
}

/// `sweep-teacher`: distills every student width from each rung of a
/// teacher-quality ladder (epoch checkpoints, then ensemble sizes).
pub fn sweep_teacher(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate(Command::SweepTeacher)?;
    let loss = cfg.loss()?;
    let data = prepare(cfg)?;
    let out = Out::new(out, cfg)?;
    out.prepared(&data)?;
    let models = out.subdir("models")?;
    let mut rows = Vec::new();
    for &seed in &cfg.run.seeds {
        for (rung, teacher) in teacher_ladder(cfg, &data, seed)? {
            let teacher_test = teacher_errors(&teacher, &data)?.1;
            let transfer = transfer_set(cfg, &data, &teacher, loss)?;
            for &width in &cfg.sweep.student_widths {
                let spec = student_spec(cfg, &data, width)?;
                let (model, metrics) = train_mimic(cfg, &data, &transfer, &spec, loss, seed)?;
                let id = format!("{rung}_w{width}_s{seed}");
                model.save(models.join(format!("{id}.smim")))?;
                write_metrics_csv(models.join(format!("{id}.metrics.csv")), &metrics, out.record_time)?;
                rows.push(SweepRow::new(id, &spec, Regime::Mimic, errors(&model, &data)?, Some(teacher_test)));
            }
        }
    }
    out.sweep("sweep_teacher.csv", &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// `eval`: error rate of a saved model on a labeled CSV.
pub fn eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate(Command::Eval)?;
    let model = Model::load(&cfg.eval.model)?;
    let mut data = load_csv(&cfg.eval.dataset, &cfg.label_column(), model.output_dim())?;
    if !cfg.eval.preprocess.is_empty() {
        data = Pipeline::load(&cfg.eval.preprocess)?.apply(&data)?;
    }
    if data.dim() != model.input_size() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            data.dim(),
            model.input_size()
        )));
    }
    let error_rate = evaluate(&model, &data)?;
    let c = model.output_dim();
    let mut confusion = vec![vec![0; c]; c];
    let logits = predict_all(&model, &data.features)?;
    for (row, &label) in logits.row_iter().zip(data.hard_labels.as_deref().expect("labeled")) {
        confusion[label][argmax(row)] += 1;
    }
    if !cfg.eval.confusion.is_empty() {
        write(Path::new(&cfg.eval.confusion), &confusion_csv(&confusion))?;
    }
    Ok(EvalReport { error_rate, confusion })
}

pub fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let c = confusion.len();
    let mut out = String::from("label");
    for j in 0..c {
        out.push_str(&format!(",pred{j}"));
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// `absorb`: writes the merged model, returns (before, after) counts.
pub fn absorb(cfg: &ExperimentConfig, out: &Path) -> Result<(usize, usize)> {
    cfg.validate(Command::Absorb)?;
    let model = Model::load(&cfg.absorb.model)?;
    let merged = absorb_bottleneck(&model)?;
    let target = if cfg.absorb.output.is_empty() {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        out.join("absorbed.smim")
    } else {
        PathBuf::from(&cfg.absorb.output)
    };
    merged.save(&target)?;
    Ok((model.param_count(), merged.param_count()))
}
