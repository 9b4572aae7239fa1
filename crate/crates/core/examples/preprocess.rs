//! Standardization, global contrast normalization and ZCA whitening, plus
//! the sidecar file that carries a fitted pipeline to evaluation time.

use shallow_mimic::data::{gcn, zca_apply, zca_fit, Pipeline, PreprocessKind};
use shallow_mimic::numerics::{axis_stats, matmul, sample_gaussian, Axis};
use shallow_mimic::{Matrix, Result, RngStream};

fn main() -> Result<()> {
    let mut rng = RngStream::new(11);
    let d = 16;
    let z = sample_gaussian(&mut rng, 5000, d, 0.0, 1.0)?;
    let mix = sample_gaussian(&mut rng, d, d, 0.0, 0.3 / (d as f64).sqrt())?;
    let mut x = matmul(&z, &mix)?;
    for (o, zi) in x.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *o += zi + 5.0;
    }

    let g = gcn(&x);
    let (mu, sd) = axis_stats(&g, Axis::Cols)?;
    println!("after GCN: first row mean {:.1e}, std {:.6}", mu[0], sd[0]);

    let stats = zca_fit(&x, 1e-5)?;
    let w = zca_apply(&stats, &x)?;
    let n = w.rows() as f64;
    let cov = matmul(&w.transpose(), &w)?.map(|v| v / n);
    println!("after ZCA: max |cov - I| = {:.2e}", cov.max_abs_diff(&Matrix::identity(d)));

    let pipeline = Pipeline::fit(&[PreprocessKind::Standardize, PreprocessKind::Zca], &x, 1e-5)?;
    let path = std::env::temp_dir().join("example-preprocess.smps");
    pipeline.save(&path)?;
    let reloaded = Pipeline::load(&path)?;
    let same = pipeline.transform(&x)?.max_abs_diff(&reloaded.transform(&x)?);
    println!("sidecar round trip: max difference {same:.1e} ({})", path.display());
    Ok(())
}
