//! Students distilled from teachers of increasing quality: early checkpoints
//! of one member, then ensembles of growing size. Same code path as
//! `mimic sweep-teacher`; output goes under the first argument (default
//! `out/sweep-teacher`).

use std::path::PathBuf;

use shallow_mimic::harness::stats::spearman;
use shallow_mimic::harness::{commands, ExperimentConfig, Regime};
use shallow_mimic::Result;

const CONFIG: &str = r#"
[run]
seeds = [1]

[synthetic]
n_train = 2000
n_unlabeled = 8000

[teacher]
hidden = [128, 128, 128]
members = 4
dropout = 0.2
learning_rate = 0.05
epochs = 30

[sweep]
ladder_epochs = [1, 3]
ensemble_sizes = [1, 4]
student_widths = [16, 128]
"#;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/sweep-teacher".into()));
    let cfg = ExperimentConfig::from_toml_with_overrides(CONFIG, &[])?;
    let rows = commands::sweep_teacher(&cfg, &out)?;
    print!("{}", commands::sweep_csv(&rows));
    for width in &cfg.sweep.student_widths {
        let (teacher, student): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.regime == Regime::Mimic && r.hidden_units.0 == *width)
            .filter_map(|r| Some((1.0 - r.teacher_error?, 1.0 - r.test_error)))
            .unzip();
        if let Some(rho) = spearman(&teacher, &student) {
            println!("width {width}: Spearman(teacher acc, student acc) = {rho:.2}");
        }
    }
    Ok(())
}
