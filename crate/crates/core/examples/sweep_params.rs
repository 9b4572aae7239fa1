//! Direct vs. mimic students across hidden widths, driven through the same
//! code path as `mimic sweep-params`. Writes models and CSVs under the
//! directory given as the first argument (default `out/sweep-params`).

use std::path::PathBuf;

use shallow_mimic::harness::{commands, ExperimentConfig};
use shallow_mimic::Result;

const CONFIG: &str = r#"
[run]
seeds = [1]

[synthetic]
n_train = 2000
n_unlabeled = 8000

[teacher]
hidden = [128, 128, 128]
members = 3
dropout = 0.2
learning_rate = 0.05
epochs = 30

[sweep]
widths = [8, 32, 128]
"#;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/sweep-params".into()));
    let cfg = ExperimentConfig::from_toml_with_overrides(CONFIG, &[])?;
    let rows = commands::sweep_params(&cfg, &out)?;
    print!("{}", commands::sweep_csv(&rows));
    Ok(())
}
