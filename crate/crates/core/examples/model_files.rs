//! Binary model files, transfer-set directories and metrics CSVs.

use shallow_mimic::data::{make_synthetic, SyntheticSpec};
use shallow_mimic::distill::{build_transfer_set, load_transfer_set, save_transfer_set, Teacher};
use shallow_mimic::nn::{init_params, Model, NetworkSpec};
use shallow_mimic::optim::{metrics_csv, train, TrainConfig};
use shallow_mimic::{Result, RngStream};

fn main() -> Result<()> {
    let spec = SyntheticSpec {
        n_train: 300,
        n_unlabeled: 300,
        n_dev: 100,
        n_test: 100,
        ..SyntheticSpec::benchmark()
    };
    let data = make_synthetic(&spec, 5)?;
    let net = NetworkSpec::mlp(spec.dims, &[32, 32], spec.classes, 0.0)?;
    let init = init_params(&net, &mut RngStream::new(5))?;
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let (model, metrics) = train(&init, &data.train, &data.dev, &cfg)?;
    print!("{}", metrics_csv(&metrics, false));

    let dir = std::env::temp_dir().join("shallow-mimic-example");
    let path = dir.join("teacher.smim");
    std::fs::create_dir_all(&dir).map_err(|e| shallow_mimic::Error::io(&dir, e))?;
    model.save(&path)?;
    let reloaded = Model::load(&path)?;
    println!("model round trip identical: {}", reloaded.to_bytes()? == model.to_bytes()?);

    let transfer = build_transfer_set(&data.train, &data.unlabeled, &model, true)?;
    let transfer_dir = dir.join("transfer");
    save_transfer_set(&transfer_dir, &transfer, &model.fingerprint()?)?;
    let (back, header) = load_transfer_set(&transfer_dir)?;
    println!(
        "transfer set: {} rows, {} classes, normalized {}, teacher {}",
        back.len(),
        header.classes,
        header.normalized,
        &header.teacher_sha256[..16]
    );
    println!("files in {}", dir.display());
    Ok(())
}
