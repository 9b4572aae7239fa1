//! Experiment configuration.
//!
//! A TOML file with one table per section. Every key can be overridden on
//! the command line as `--section.key value`; list values are comma
//! separated. Unknown sections or keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{LabelColumn, PreprocessKind, SyntheticSpec, DEFAULT_ZCA_EPSILON};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::optim::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub teacher: TeacherSection,
    pub student: StudentSection,
    pub distill: DistillSection,
    pub sweep: SweepSection,
    pub eval: EvalSection,
    pub absorb: AbsorbSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// One replicate per seed; outputs are assembled in this order.
    pub seeds: Vec<u64>,
    /// Write wall-clock seconds into metrics files. Off by default so that
    /// reruns are byte-identical.
    pub record_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic` or `csv`.
    pub source: String,
    pub train: String,
    pub dev: String,
    pub test: String,
    /// Feature-only CSV; empty means no unlabeled pool.
    pub unlabeled: String,
    /// Header name or zero-based index.
    pub label_column: String,
    /// Class count for CSV data.
    pub classes: usize,
    /// Ordered steps from `standardize`, `gcn`, `zca`.
    pub preprocess: Vec<String>,
    pub zca_epsilon: f64,
    /// Fit preprocessing on train plus the unlabeled pool instead of train
    /// alone.
    pub fit_on_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: u64,
    pub classes: usize,
    pub dims: usize,
    pub clusters_per_class: usize,
    pub separation: f64,
    pub cluster_std: f64,
    pub n_train: usize,
    pub n_unlabeled: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Train each member on a bootstrap resample of the train set.
    pub bootstrap: bool,
    /// Ensemble size when a command trains its own teacher.
    pub members: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub hidden: usize,
    /// Width of the linear bottleneck; 0 means none.
    pub bottleneck: usize,
    pub dropout: f64,
    /// `l2_logit`, `kl` or `l2_prob`.
    pub loss: String,
    /// `auto` (on for l2_logit only), `on` or `off`.
    pub normalize: String,
    /// Add the unlabeled pool to the transfer set.
    pub use_pool: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    /// Teacher model files; several form an ensemble. Empty means train a
    /// teacher from the `teacher` section first.
    pub teachers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Student widths for `sweep-params`.
    pub widths: Vec<usize>,
    /// Teacher checkpoints (epochs) forming the quality ladder.
    pub ladder_epochs: Vec<usize>,
    /// Extra ladder rungs: ensembles of this many fully trained teachers.
    pub ensemble_sizes: Vec<usize>,
    /// Student widths distilled from every rung.
    pub student_widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub model: String,
    pub dataset: String,
    /// Preprocessing sidecar to apply to the dataset first.
    pub preprocess: String,
    /// Write a confusion matrix CSV here.
    pub confusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AbsorbSection {
    pub model: String,
    /// Defaults to `absorbed.smim` in the output directory.
    pub output: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            record_time: false,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            train: String::new(),
            dev: String::new(),
            test: String::new(),
            unlabeled: String::new(),
            label_column: "label".into(),
            classes: 0,
            preprocess: vec!["standardize".into()],
            zca_epsilon: DEFAULT_ZCA_EPSILON,
            fit_on_pool: false,
        }
    }
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let b = SyntheticSpec::benchmark();
        Self {
            seed: 0,
            classes: b.classes,
            dims: b.dims,
            clusters_per_class: b.clusters_per_class,
            separation: b.separation,
            cluster_std: b.cluster_std,
            n_train: b.n_train,
            n_unlabeled: b.n_unlabeled,
            n_dev: b.n_dev,
            n_test: b.n_test,
        }
    }
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            dropout: 0.5,
            bootstrap: true,
            members: 5,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            lr_decay: 1.0,
            patience: 0,
        }
    }
}

impl Default for StudentSection {
    fn default() -> Self {
        Self {
            hidden: 256,
            bottleneck: 0,
            dropout: 0.0,
            loss: "l2_logit".into(),
            normalize: "auto".into(),
            use_pool: true,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            lr_decay: 1.0,
            patience: 0,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            widths: vec![16, 64, 256],
            ladder_epochs: vec![1, 3, 9, 27],
            ensemble_sizes: Vec::new(),
            student_widths: vec![16, 256],
        }
    }
}


fn patience(p: usize) -> Option<usize> {
    (p > 0).then_some(p)
}

impl SyntheticSection {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            dims: self.dims,
            clusters_per_class: self.clusters_per_class,
            separation: self.separation,
            cluster_std: self.cluster_std,
            n_train: self.n_train,
            n_unlabeled: self.n_unlabeled,
            n_dev: self.n_dev,
            n_test: self.n_test,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text and applies `(section.key, value)` overrides.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let defaults = Value::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override {key:?} is not section.key")))?;
            let template = defaults
                .get(section)
                .and_then(|s| s.get(field))
                .ok_or_else(|| Error::Config(format!("unknown setting {key}")))?;
            let value = parse_override(template, raw)
                .ok_or_else(|| Error::Config(format!("cannot parse {raw:?} for {key}")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            let Value::Table(t) = entry else {
                return Err(Error::Config(format!("{section} is not a section")));
            };
            t.insert(field.to_string(), value);
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every `section.key` setting with its default rendered as text.
    pub fn setting_names() -> Vec<(String, String)> {
        let Ok(Value::Table(t)) = Value::try_from(Self::default()) else {
            unreachable!("config serializes to a table")
        };
        let mut out = Vec::new();
        for (section, fields) in &t {
            if let Value::Table(fields) = fields {
                for (k, v) in fields {
                    out.push((format!("{section}.{k}"), v.to_string()));
                }
            }
        }
        out
    }

    pub fn loss(&self) -> Result<LossKind> {
        let loss = LossKind::parse(&self.student.loss)?;
        if !loss.needs_soft_targets() {
            return Err(Error::Config("student.loss must be a mimic loss (l2_logit, kl or l2_prob)".into()));
        }
        Ok(loss)
    }

    /// Whether mimic targets are normalized for `loss`.
    pub fn normalize_for(&self, loss: LossKind) -> Result<bool> {
        match self.student.normalize.as_str() {
            "auto" => Ok(loss == LossKind::L2Logit),
            "on" | "true" => Ok(true),
            "off" | "false" => Ok(false),
            other => Err(Error::Config(format!(
                "student.normalize is {other:?}, expected auto, on or off"
            ))),
        }
    }

    pub fn preprocess_kinds(&self) -> Result<Vec<PreprocessKind>> {
        self.data.preprocess.iter().map(|s| PreprocessKind::parse(s)).collect()
    }

    pub fn label_column(&self) -> LabelColumn {
        self.data.label_column.parse().expect("infallible")
    }

    pub fn teacher_train(&self, seed: u64) -> TrainConfig {
        let t = &self.teacher;
        TrainConfig {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            max_epochs: t.epochs,
            seed,
            loss: LossKind::CrossEntropyHard,
            early_stop_patience: patience(t.patience),
            lr_decay: t.lr_decay,
            shuffle: true,
        }
    }

    pub fn student_train(&self, seed: u64, loss: LossKind) -> TrainConfig {
        let s = &self.student;
        TrainConfig {
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            batch_size: s.batch_size,
            max_epochs: s.epochs,
            seed,
            loss,
            early_stop_patience: patience(s.patience),
            lr_decay: s.lr_decay,
            shuffle: true,
        }
    }

    /// Checks everything that can be checked before any compute: value
    /// ranges, enumerations and that referenced files exist.
    pub fn validate(&self, command: super::Command) -> Result<()> {
        use super::Command;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        self.teacher_train(0).validate()?;
        let loss = self.loss()?;
        self.normalize_for(loss)?;
        self.student_train(0, loss).validate()?;
        self.preprocess_kinds()?;
        if !(0.0..1.0).contains(&self.teacher.dropout) || !(0.0..1.0).contains(&self.student.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.student.hidden == 0 || self.teacher.members == 0 {
            return Err(Error::Config("student.hidden and teacher.members must be positive".into()));
        }
        if !(self.data.zca_epsilon > 0.0) {
            return Err(Error::Config("data.zca_epsilon must be positive".into()));
        }
        let needs_data = !matches!(command, Command::Eval | Command::Absorb);
        if needs_data {
            match self.data.source.as_str() {
                "synthetic" => self.synthetic.spec().validate()?,
                "csv" => {
                    if self.data.classes < 2 {
                        return Err(Error::Config("data.classes must be at least 2 for csv data".into()));
                    }
                    for (name, p) in [("train", &self.data.train), ("dev", &self.data.dev), ("test", &self.data.test)] {
                        if p.is_empty() {
                            return Err(Error::Config(format!("data.{name} is required for csv data")));
                        }
                        require_file(&format!("data.{name}"), p)?;
                    }
                    if !self.data.unlabeled.is_empty() {
                        require_file("data.unlabeled", &self.data.unlabeled)?;
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "data.source is {other:?}, expected synthetic or csv"
                    )))
                }
            }
        }
        for t in &self.distill.teachers {
            require_file("distill.teachers", t)?;
        }
        match command {
            Command::SweepParams if self.sweep.widths.is_empty() => {
                return Err(Error::Config("sweep.widths must not be empty".into()))
            }
            Command::SweepTeacher => {
                if self.sweep.student_widths.is_empty() {
                    return Err(Error::Config("sweep.student_widths must not be empty".into()));
                }
                if self.sweep.ladder_epochs.is_empty() && self.sweep.ensemble_sizes.is_empty() {
                    return Err(Error::Config("the teacher ladder is empty".into()));
                }
                if self.sweep.ladder_epochs.iter().any(|&e| e == 0 || e > self.teacher.epochs) {
                    return Err(Error::Config(format!(
                        "sweep.ladder_epochs must lie in 1..={}",
                        self.teacher.epochs
                    )));
                }
                if self.sweep.ensemble_sizes.contains(&0) {
                    return Err(Error::Config("sweep.ensemble_sizes must be positive".into()));
                }
            }
            Command::Eval => {
                require_file("eval.model", &self.eval.model)?;
                require_file("eval.dataset", &self.eval.dataset)?;
                if !self.eval.preprocess.is_empty() {
                    require_file("eval.preprocess", &self.eval.preprocess)?;
                }
            }
            Command::Absorb => require_file("absorb.model", &self.absorb.model)?,
            _ => {}
        }
        if matches!(command, Command::SweepParams | Command::SweepTeacher)
            && self.sweep.widths.iter().chain(&self.sweep.student_widths).any(|&w| w == 0)
        {
            return Err(Error::Config("sweep widths must be positive".into()));
        }
        Ok(())
    }
}

fn require_file(key: &str, path: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Config(format!("{key} is required")));
    }
    if !PathBuf::from(path).is_file() {
        return Err(Error::Config(format!("{key}: {path} does not exist")));
    }
    Ok(())
}

/// Parses a command-line value using the default value's type.
fn parse_override(template: &Value, raw: &str) -> Option<Value> {
    let raw = raw.trim();
    match template {
        Value::String(_) => Some(Value::String(raw.to_string())),
        Value::Integer(_) => raw.parse().ok().map(Value::Integer),
        Value::Float(_) => raw.parse().ok().map(Value::Float),
        Value::Boolean(_) => raw.parse().ok().map(Value::Boolean),
        Value::Array(items) => {
            if raw.is_empty() {
                return Some(Value::Array(Vec::new()));
            }
            let element = items.first();
            raw.split(',')
                .map(|part| match element {
                    Some(e) => parse_override(e, part),
                    None => Some(scalar_guess(part.trim())),
                })
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        _ => None,
    }
}

fn scalar_guess(raw: &str) -> Value {
    if let Ok(i) = raw.parse() {
        Value::Integer(i)
    } else if let Ok(f) = raw.parse() {
        Value::Float(f)
    } else if let Ok(b) = raw.parse() {
        Value::Boolean(b)
    } else {
        Value::String(raw.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_with_overrides("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_with_overrides(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = ExperimentConfig::from_toml_with_overrides("[student]\nhiden = 3\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_toml_with_overrides("[nope]\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_toml_with_overrides("", &[ov("student.hiden", "3")]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn overrides_win_and_are_typed() {
        let text = "[student]\nhidden = 8\nloss = \"kl\"\n";
        let cfg = ExperimentConfig::from_toml_with_overrides(
            text,
            &[
                ov("student.hidden", "32"),
                ov("sweep.widths", "4,8"),
                ov("student.learning_rate", "1"),
                ov("distill.teachers", "a.smim,b.smim"),
                ov("run.record_time", "true"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.student.hidden, 32);
        assert_eq!(cfg.student.loss, "kl");
        assert_eq!(cfg.sweep.widths, vec![4, 8]);
        assert_eq!(cfg.student.learning_rate, 1.0);
        assert_eq!(cfg.distill.teachers, vec!["a.smim", "b.smim"]);
        assert!(cfg.run.record_time);
        assert!(ExperimentConfig::from_toml_with_overrides("", &[ov("student.hidden", "x")]).is_err());
    }

    #[test]
    fn setting_names_cover_every_section() {
        let names = ExperimentConfig::setting_names();
        for key in ["run.seeds", "student.loss", "teacher.hidden", "sweep.widths", "eval.model"] {
            assert!(names.iter().any(|(n, _)| n == key), "{key}");
        }
    }

    #[test]
    fn normalization_defaults_follow_loss() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.normalize_for(LossKind::L2Logit).unwrap());
        assert!(!cfg.normalize_for(LossKind::KlMimic).unwrap());
        assert!(!cfg.normalize_for(LossKind::L2Prob).unwrap());
    }

    #[test]
    fn validation_catches_bad_values_and_paths() {
        use super::super::Command;
        let mut cfg = ExperimentConfig::default();
        cfg.validate(Command::Distill).unwrap();
        cfg.run.seeds.clear();
        assert!(matches!(cfg.validate(Command::Distill), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.distill.teachers = vec!["/definitely/missing.smim".into()];
        assert!(matches!(cfg.validate(Command::Distill), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.student.loss = "xent".into();
        assert!(matches!(cfg.validate(Command::Distill), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.ladder_epochs = vec![99];
        assert!(matches!(cfg.validate(Command::SweepTeacher), Err(Error::Config(_))));
    }
}
