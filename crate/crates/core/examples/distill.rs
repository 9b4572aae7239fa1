//! End to end on the synthetic benchmark: train a deep ensemble, label an
//! unlabeled pool with its logits, and compare a shallow net trained on the
//! labels with one trained to mimic the logits.

use shallow_mimic::data::{apply_stats, make_synthetic, standardize, SyntheticSpec};
use shallow_mimic::distill::{build_transfer_set, EnsembleModel, Teacher};
use shallow_mimic::loss::LossKind;
use shallow_mimic::nn::{init_params, NetworkSpec};
use shallow_mimic::optim::{evaluate, train, TrainConfig};
use shallow_mimic::{Result, RngStream};

fn main() -> Result<()> {
    let spec = SyntheticSpec {
        n_train: 2000,
        n_unlabeled: 8000,
        ..SyntheticSpec::benchmark()
    };
    let splits = make_synthetic(&spec, 1)?;
    let (train_set, stats) = standardize(&splits.train)?;
    let dev = apply_stats(&stats, &splits.dev)?;
    let test = apply_stats(&stats, &splits.test)?;
    let pool = stats.transform(&splits.unlabeled)?;

    let teacher_cfg = TrainConfig {
        learning_rate: 0.05,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let teacher_spec = NetworkSpec::mlp(spec.dims, &[128, 128, 128], spec.classes, 0.2)?;
    let mut members = Vec::new();
    for k in 0..3 {
        let rng = RngStream::new(100 + k);
        let init = init_params(&teacher_spec, &mut rng.child(0))?;
        let sample = train_set.bootstrap(&mut rng.child(1));
        let (m, _) = train(&init, &sample, &dev, &TrainConfig { seed: k, ..teacher_cfg.clone() })?;
        println!("teacher member {k}: test error {:.4}", evaluate(&m, &test)?);
        members.push(m);
    }
    let teacher = EnsembleModel::new(members)?;

    let student_spec = NetworkSpec::shallow(spec.dims, 256, None, spec.classes, 0.0)?;
    let init = init_params(&student_spec, &mut RngStream::new(7))?;
    let (direct, _) = train(&init, &train_set, &dev, &TrainConfig { learning_rate: 0.02, ..TrainConfig::default() })?;

    let transfer = build_transfer_set(&train_set, &pool, &teacher, true)?;
    let mimic_cfg = TrainConfig {
        loss: LossKind::L2Logit,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    let (mimic, _) = train(&init, &transfer, &dev, &mimic_cfg)?;

    println!("teacher fingerprint {}", &teacher.fingerprint()?[..16]);
    println!("shallow net on hard labels: test error {:.4}", evaluate(&direct, &test)?);
    println!("shallow mimic on {} logits: test error {:.4}", transfer.len(), evaluate(&mimic, &test)?);
    Ok(())
}
