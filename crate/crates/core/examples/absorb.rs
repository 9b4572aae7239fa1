//! Fold a trained linear bottleneck into the hidden layer and check that
//! predictions do not change.

use shallow_mimic::nn::{absorb_bottleneck, init_params, param_count, LayerSpec, NetworkSpec, Shape};
use shallow_mimic::numerics::sample_gaussian;
use shallow_mimic::{Result, RngStream};

fn main() -> Result<()> {
    let mut rng = RngStream::new(3);
    let spec = NetworkSpec::shallow(64, 512, Some(16), 10, 0.0)?;
    let model = init_params(&spec, &mut rng)?;
    let merged = absorb_bottleneck(&model)?;
    let x = sample_gaussian(&mut rng, 100, 64, 0.0, 1.0)?;
    let diff = model.predict(&x)?.max_abs_diff(&merged.predict(&x)?);
    println!("factored: {} params, absorbed: {} params", model.param_count(), merged.param_count());
    println!("max |logit difference| over 100 inputs: {diff:.2e}");

    // Speech-scale sizes: 1845 inputs, 250 linear units, 400k hidden units.
    let big = NetworkSpec::new(
        Shape::Flat(1845),
        vec![
            LayerSpec::linear(1845, 250),
            LayerSpec::relu(250, 400_000),
            LayerSpec::linear(400_000, 183),
        ],
        183,
    )?;
    let deep = NetworkSpec::mlp(1845, &[2000, 2000, 2000], 183, 0.5)?;
    println!("400k-wide student with 250-unit bottleneck: {} params", param_count(&big));
    println!("three 2000-unit hidden layers:               {} params", param_count(&deep));
    Ok(())
}
