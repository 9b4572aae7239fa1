//! File contracts of the `mimic` sub-commands, exercised through the binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shallow_mimic::data::{save_csv, Dataset};
use shallow_mimic::distill::load_transfer_set;
use shallow_mimic::harness::commands::{self, read_sweep_csv};
use shallow_mimic::harness::pipeline::{errors, prepare};
use shallow_mimic::harness::{ExperimentConfig, Regime};
use shallow_mimic::nn::{init_params, LayerSpec, Model, NetworkSpec, Param, Shape};
use shallow_mimic::optim::evaluate;
use shallow_mimic::{Matrix, RngStream};
use tempfile::TempDir;

const TINY: &str = r#"
[synthetic]
dims = 8
classes = 3
n_train = 120
n_unlabeled = 60
n_dev = 40
n_test = 40

[teacher]
hidden = [10, 10]
members = 2
epochs = 3

[student]
hidden = 6
epochs = 2

[sweep]
widths = [16, 64, 256]
ladder_epochs = [1, 2]
ensemble_sizes = [1, 2]
student_widths = [6]
"#;

fn mimic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimic")).args(args).output().unwrap()
}

fn setup() -> (TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg.display().to_string())
}

fn run_ok(args: &[&str]) -> String {
    let o = mimic(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn out_arg(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn one_seed_gives_one_model_and_one_metrics_file() {
    let (dir, cfg) = setup();
    let out = out_arg(&dir, "t");
    run_ok(&["train-teacher", "--config", &cfg, "--out", &out, "--seeds", "1"]);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("teacher_"))
        .collect();
    names.sort();
    assert_eq!(names, ["teacher_s1.metrics.csv", "teacher_s1.smim"]);
}

#[test]
fn sweep_params_rows_match_reloaded_models() {
    let (dir, cfg) = setup();
    let out = out_arg(&dir, "sp");
    let stdout = run_ok(&["sweep-params", "--config", &cfg, "--out", &out, "--seeds", "1"]);
    let rows = read_sweep_csv(Path::new(&out).join("sweep_params.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.regime == Regime::Direct).count(), 3);
    assert_eq!(stdout, commands::sweep_csv(&rows));

    let config = ExperimentConfig::load(Some(Path::new(&cfg)), &[]).unwrap();
    let data = prepare(&config).unwrap();
    for row in &rows {
        let model = Model::load(Path::new(&out).join("models").join(format!("{}.smim", row.model_id))).unwrap();
        assert_eq!(model.param_count(), row.params);
        assert_eq!(model.spec().hidden_units(), row.hidden_units);
        let (dev, test) = errors(&model, &data).unwrap();
        assert_eq!((dev, test), (row.dev_error, row.test_error), "{}", row.model_id);
    }
}

#[test]
fn sweep_teacher_has_one_row_per_rung() {
    let (dir, cfg) = setup();
    let out = out_arg(&dir, "st");
    run_ok(&["sweep-teacher", "--config", &cfg, "--out", &out, "--seeds", "1"]);
    let rows = read_sweep_csv(Path::new(&out).join("sweep_teacher.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.teacher_error.is_some() && r.regime == Regime::Mimic));
}

#[test]
fn empty_pool_relabels_exactly_the_train_set() {
    let (dir, cfg) = setup();
    let out = out_arg(&dir, "d");
    run_ok(&["distill", "--config", &cfg, "--out", &out, "--seeds", "1", "--student.use_pool", "false"]);
    let (transfer, header) = load_transfer_set(Path::new(&out).join("transfer")).unwrap();
    assert_eq!(transfer.len(), 120);
    assert_eq!(header.rows, 120);
    assert!(header.normalized);
}

fn identity_model(d: usize) -> Model {
    let spec = NetworkSpec::new(Shape::Flat(d), vec![LayerSpec::linear(d, d)], d).unwrap();
    let param = Param {
        weight: Matrix::identity(d),
        bias: Some(vec![0.0; d]),
    };
    Model::from_parts(spec, vec![Some(param)]).unwrap()
}

#[test]
fn eval_perfect_model_and_confusion_counts() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("id.smim");
    identity_model(3).save(&model).unwrap();
    let features = Matrix::from_rows(&[[5.0, 0.0, 1.0], [0.0, 2.0, 1.0], [0.0, 0.0, 3.0], [1.0, 0.5, 0.0]]).unwrap();
    let labels = vec![0, 1, 2, 0];
    let data = Dataset::labeled(features, labels, 3).unwrap();
    let csv = dir.path().join("d.csv");
    save_csv(&csv, &data).unwrap();
    let confusion = dir.path().join("c.csv");
    let stdout = run_ok(&[
        "eval",
        &model.display().to_string(),
        &csv.display().to_string(),
        "--eval.confusion",
        &confusion.display().to_string(),
    ]);
    assert_eq!(stdout, "error_rate,0.0000\n");
    assert_eq!(
        fs::read_to_string(&confusion).unwrap(),
        "label,pred0,pred1,pred2\n0,2,0,0\n1,0,1,0\n2,0,0,1\n"
    );
}

#[test]
fn eval_matches_library_evaluate_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngStream::new(8);
    let spec = NetworkSpec::shallow(4, 7, None, 3, 0.0).unwrap();
    let model = init_params(&spec, &mut rng).unwrap();
    let path = dir.path().join("m.smim");
    model.save(&path).unwrap();
    let features = shallow_mimic::numerics::sample_gaussian(&mut rng, 50, 4, 0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..50).map(|_| rng.below(3)).collect();
    let data = Dataset::labeled(features, labels, 3).unwrap();
    let csv = dir.path().join("d.csv");
    save_csv(&csv, &data).unwrap();

    let cfg = ExperimentConfig::from_toml_with_overrides(
        "",
        &[
            ("eval.model".into(), path.display().to_string()),
            ("eval.dataset".into(), csv.display().to_string()),
        ],
    )
    .unwrap();
    let report = commands::eval(&cfg).unwrap();
    assert_eq!(report.error_rate.to_bits(), evaluate(&model, &data).unwrap().to_bits());
    let per_class: Vec<usize> = (0..3)
        .map(|c| data.hard_labels.as_ref().unwrap().iter().filter(|&&l| l == c).count())
        .collect();
    let row_sums: Vec<usize> = report.confusion.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(row_sums, per_class);
}

#[test]
fn absorb_prints_counts_and_refuses_to_absorb_twice() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::shallow(1845, 8000, Some(250), 183, 0.0).unwrap();
    let model = init_params(&spec, &mut RngStream::new(1)).unwrap();
    let path = dir.path().join("big.smim");
    model.save(&path).unwrap();
    let out = out_arg(&dir, "a");
    let stdout = run_ok(&["absorb", &path.display().to_string(), "--out", &out]);
    assert_eq!(stdout, "params_before,3933433\nparams_after,16232183\n");

    let merged = Path::new(&out).join("absorbed.smim").display().to_string();
    let again = mimic(&["absorb", &merged, "--out", &out]);
    assert!(!again.status.success());
    assert!(!String::from_utf8_lossy(&again.stderr).is_empty());
}

#[test]
fn configuration_errors_exit_before_training() {
    let (dir, cfg) = setup();
    let out = out_arg(&dir, "bad");
    let o = mimic(&["distill", "--config", &cfg, "--out", &out, "--distill.teachers", "/missing/t.smim"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&out).exists());
    let o = mimic(&["train-teacher", "--config", &cfg, "--out", &out, "--teacher.bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
