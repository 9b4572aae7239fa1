use crate::error::{Error, Result};
use crate::nn::model::{Model, Param};
use crate::nn::spec::{Activation, LayerSpec, NetworkSpec};
use crate::numerics::matmul;

/// Index of the first `Dense(identity)` layer directly followed by another
/// dense layer.
pub fn find_bottleneck(spec: &NetworkSpec) -> Option<usize> {
    spec.layers.windows(2).position(|pair| {
        matches!(
            pair,
            [
                LayerSpec::Dense {
                    activation: Activation::Identity,
                    ..
                },
                LayerSpec::Dense { .. }
            ]
        )
    })
}

/// Folds a linear bottleneck `V` (with optional bias `c`) into the following
/// dense layer `U, b`, giving one layer with weight `U V` and bias `U c + b`.
///
/// The merged network computes the same function as the original.
pub fn absorb_bottleneck(model: &Model) -> Result<Model> {
    let spec = model.spec();
    let at = find_bottleneck(spec)
        .ok_or_else(|| Error::Contract("model has no linear bottleneck to absorb".into()))?;
    let (LayerSpec::Dense { input, bias: v_bias, .. }, LayerSpec::Dense { output, activation, bias: u_bias, .. }) =
        (&spec.layers[at], &spec.layers[at + 1])
    else {
        unreachable!("find_bottleneck only matches dense pairs");
    };
    let v = model.params()[at].as_ref().expect("dense layer has params");
    let u = model.params()[at + 1].as_ref().expect("dense layer has params");

    let weight = matmul(&u.weight, &v.weight)?;
    let bias = if *v_bias || *u_bias {
        let mut b = u.bias.clone().unwrap_or_else(|| vec![0.0; *output]);
        if let Some(c) = &v.bias {
            for (r, bv) in b.iter_mut().enumerate() {
                let row = u.weight.row(r);
                *bv += row.iter().zip(c).map(|(w, cv)| w * cv).sum::<f64>();
            }
        }
        Some(b)
    } else {
        None
    };

    let mut layers = spec.layers.clone();
    layers.splice(
        at..at + 2,
        [LayerSpec::Dense {
            input: *input,
            output: *output,
            activation: *activation,
            bias: bias.is_some(),
        }],
    );
    let mut params = model.params().to_vec();
    params.splice(at..at + 2, [Some(Param { weight, bias })]);
    let merged = NetworkSpec::new(spec.input_shape, layers, spec.output_dim)?;
    Model::from_parts(merged, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::init_params;
    use crate::nn::spec::Shape;
    use crate::numerics::{sample_gaussian, Matrix, RngStream};

    fn pair_model(v: Matrix, u: Matrix) -> Model {
        let (k, d) = v.shape();
        let h = u.rows();
        let spec = NetworkSpec::new(
            Shape::Flat(d),
            vec![LayerSpec::bottleneck(d, k), LayerSpec::relu(k, h), LayerSpec::linear(h, 1)],
            1,
        )
        .unwrap();
        let params = vec![
            Some(Param { weight: v, bias: None }),
            Some(Param {
                weight: u,
                bias: Some(vec![0.0; h]),
            }),
            Some(Param {
                weight: Matrix::filled(1, h, 1.0),
                bias: Some(vec![0.0]),
            }),
        ];
        Model::from_parts(spec, params).unwrap()
    }

    #[test]
    fn outer_product_example() {
        let v = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let u = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let merged = absorb_bottleneck(&pair_model(v, u)).unwrap();
        let w = &merged.params()[0].as_ref().unwrap().weight;
        assert_eq!(*w, Matrix::from_rows(&[[2.0, 3.0], [2.0, 3.0]]).unwrap());
        assert_eq!(merged.spec().layers.len(), 2);
    }

    #[test]
    fn identity_factor_leaves_u() {
        let u = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25], [1.0, 1.0]]).unwrap();
        let merged = absorb_bottleneck(&pair_model(Matrix::identity(2), u.clone())).unwrap();
        assert_eq!(merged.params()[0].as_ref().unwrap().weight, u);
    }

    #[test]
    fn bottleneck_bias_moves_into_next_bias() {
        let spec = NetworkSpec::new(
            Shape::Flat(2),
            vec![LayerSpec::linear(2, 1), LayerSpec::relu(1, 2), LayerSpec::linear(2, 1)],
            1,
        )
        .unwrap();
        let mut model = init_params(&spec, &mut RngStream::new(4)).unwrap();
        model.params_mut()[0].as_mut().unwrap().bias = Some(vec![0.75]);
        model.params_mut()[1].as_mut().unwrap().bias = Some(vec![0.1, -0.2]);
        let merged = absorb_bottleneck(&model).unwrap();
        let x = sample_gaussian(&mut RngStream::new(1), 20, 2, 0.0, 1.0).unwrap();
        let diff = merged.predict(&x).unwrap().max_abs_diff(&model.predict(&x).unwrap());
        assert!(diff < 1e-12);
    }

    #[test]
    fn random_network_is_preserved() {
        let spec = NetworkSpec::shallow(12, 30, Some(4), 5, 0.2).unwrap();
        let model = init_params(&spec, &mut RngStream::new(10)).unwrap();
        let merged = absorb_bottleneck(&model).unwrap();
        let x = sample_gaussian(&mut RngStream::new(11), 100, 12, 0.0, 2.0).unwrap();
        let diff = merged.predict(&x).unwrap().max_abs_diff(&model.predict(&x).unwrap());
        assert!(diff < 1e-10, "{diff}");
        // (D*H + H) - (D*k + k*H + H) with no bottleneck bias.
        let (d, k, h) = (12i64, 4i64, 30i64);
        let delta = merged.param_count() as i64 - model.param_count() as i64;
        assert_eq!(delta, (d * h + h) - (d * k + k * h + h));
    }

    #[test]
    fn nothing_to_absorb() {
        let spec = NetworkSpec::mlp(3, &[4], 2, 0.0).unwrap();
        let model = init_params(&spec, &mut RngStream::new(1)).unwrap();
        assert!(matches!(absorb_bottleneck(&model), Err(Error::Contract(_))));
        let bottlenecked = init_params(
            &NetworkSpec::shallow(3, 4, Some(2), 2, 0.0).unwrap(),
            &mut RngStream::new(1),
        )
        .unwrap();
        let once = absorb_bottleneck(&bottlenecked).unwrap();
        assert!(matches!(absorb_bottleneck(&once), Err(Error::Contract(_))));
    }
}
