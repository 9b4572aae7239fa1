//! Compare backprop against central differences on a small convolutional net.

use shallow_mimic::loss::{l2_logit, xent_softmax};
use shallow_mimic::nn::{check_gradients, init_params, ImageShape, LayerSpec, NetworkSpec, Shape};
use shallow_mimic::numerics::sample_gaussian;
use shallow_mimic::{Result, RngStream};

fn main() -> Result<()> {
    let spec = NetworkSpec::new(
        Shape::Image(ImageShape::new(1, 5, 5)),
        vec![
            LayerSpec::Conv2D {
                in_channels: 1,
                out_channels: 2,
                kernel_h: 2,
                kernel_w: 2,
            },
            LayerSpec::MaxPool2D { pool_h: 2, pool_w: 2 },
            LayerSpec::Flatten,
            LayerSpec::relu(8, 4),
            LayerSpec::linear(4, 3),
        ],
        3,
    )?;
    let mut rng = RngStream::new(7);
    let model = init_params(&spec, &mut rng)?;
    let x = sample_gaussian(&mut rng, 4, spec.input_size(), 0.0, 1.0)?;
    let target = sample_gaussian(&mut rng, 4, 3, 0.0, 1.0)?;
    let labels = [0, 2, 1, 2];

    let l2 = check_gradients(&model, &x, |z| l2_logit(z, &target), 1e-6)?;
    let xent = check_gradients(&model, &x, |z| xent_softmax(z, &labels), 1e-6)?;
    println!("{} parameters", model.param_count());
    println!("l2 logit:      max relative error {:.2e} over {} weights", l2.max_rel_error, l2.checked);
    println!("cross-entropy: max relative error {:.2e} over {} weights", xent.max_rel_error, xent.checked);
    Ok(())
}
