use crate::error::{Error, Result};
use crate::nn::conv;
use crate::nn::spec::{Activation, LayerSpec, NetworkSpec, Shape};
use crate::numerics::{matmul_into, Matrix, RngStream};

/// Weight and optional bias of one parameterized layer.
///
/// Dense weights are `[output x input]`; conv kernels are
/// `[out_ch x (in_ch * kh * kw)]`. The same type carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Param {
    pub fn zeros_like(&self) -> Param {
        Param {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.as_slice().len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer gradients, aligned with [`Model::params`].
pub type Gradients = Vec<Option<Param>>;

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum LayerAux {
    None,
    DropoutMask(Vec<f64>),
    PoolArgmax(Vec<usize>),
}

/// Activations and dropout masks recorded by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[l + 1]` is the
    /// output of layer `l`.
    activations: Vec<Matrix>,
    aux: Vec<LayerAux>,
    shapes: Vec<Shape>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.activations
    }
}

/// A network spec bound to concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<Option<Param>>,
}

impl Model {
    /// Binds parameters to a spec, checking every shape.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Option<Param>>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter slots for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&params).enumerate() {
            match (layer.param_shapes(), p) {
                (None, None) => {}
                (Some(((r, c), nb)), Some(p)) => {
                    let bias_len = p.bias.as_ref().map_or(0, Vec::len);
                    let bias_ok = if nb == 0 { p.bias.is_none() } else { bias_len == nb };
                    if p.weight.shape() != (r, c) || !bias_ok {
                        return Err(Error::Shape(format!(
                            "layer {i} ({layer}) expects weight {r}x{c} and bias {nb}, got {}x{} and {bias_len}",
                            p.weight.rows(),
                            p.weight.cols()
                        )));
                    }
                    if !p.weight.all_finite() || p.bias.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(Error::Domain(format!("layer {i} has non-finite parameters")));
                    }
                }
                _ => {
                    return Err(Error::Shape(format!(
                        "layer {i} ({layer}) parameter presence mismatch"
                    )))
                }
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<Param>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Param>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Param::len).sum()
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Forward pass returning raw logits and the cache needed by
    /// [`Model::backward`]. Eval mode draws nothing from `rng`.
    pub fn forward(
        &self,
        batch: &Matrix,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Matrix, ForwardCache)> {
        self.check_batch(batch)?;
        let shapes = self.spec.validate()?;
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.spec.layers.len());
        activations.push(batch.clone());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = &activations[i];
            let (out, a) = self.layer_forward(i, layer, input, shapes[i], mode, rng)?;
            activations.push(out);
            aux.push(a);
        }
        let logits = activations.last().cloned().unwrap_or_else(|| batch.clone());
        Ok((
            logits,
            ForwardCache {
                activations,
                aux,
                shapes,
            },
        ))
    }

    /// Eval-mode logits without keeping intermediate activations.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let shapes = self.spec.validate()?;
        // Eval mode never touches the stream.
        let mut unused = RngStream::new(0);
        let mut current = batch.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            current = self
                .layer_forward(i, layer, &current, shapes[i], Mode::Eval, &mut unused)?
                .0;
        }
        Ok(current)
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_size() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_size()
            )));
        }
        Ok(())
    }

    fn layer_forward(
        &self,
        index: usize,
        layer: &LayerSpec,
        input: &Matrix,
        in_shape: Shape,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Matrix, LayerAux)> {
        match *layer {
            LayerSpec::Dense { activation, .. } => {
                let p = self.param(index);
                let mut out = Matrix::zeros(input.rows(), p.weight.rows());
                matmul_into(input, &p.weight.transpose(), &mut out);
                let cols = out.cols();
                if let Some(b) = &p.bias {
                    for row in out.as_mut_slice().chunks_exact_mut(cols) {
                        row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
                    }
                }
                if activation == Activation::Relu {
                    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                }
                Ok((out, LayerAux::None))
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    return Ok((input.clone(), LayerAux::None));
                }
                let keep_scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..input.as_slice().len())
                    .map(|_| if rng.next_f64() >= rate { keep_scale } else { 0.0 })
                    .collect();
                let mut out = input.clone();
                out.as_mut_slice()
                    .iter_mut()
                    .zip(&mask)
                    .for_each(|(v, m)| *v *= m);
                Ok((out, LayerAux::DropoutMask(mask)))
            }
            LayerSpec::Conv2D {
                kernel_h, kernel_w, ..
            } => {
                let p = self.param(index);
                let img = image_shape(in_shape, index)?;
                let bias = p.bias.as_deref().unwrap_or(&[]);
                let (out, _) = conv::conv2d_forward(&p.weight, bias, kernel_h, kernel_w, input, img)?;
                Ok((out, LayerAux::None))
            }
            LayerSpec::MaxPool2D { pool_h, pool_w } => {
                let img = image_shape(in_shape, index)?;
                let (out, _, argmax) = conv::maxpool_forward(pool_h, pool_w, input, img)?;
                Ok((out, LayerAux::PoolArgmax(argmax)))
            }
            LayerSpec::Flatten => Ok((input.clone(), LayerAux::None)),
        }
    }

    fn param(&self, index: usize) -> &Param {
        self.params[index]
            .as_ref()
            .expect("validated model has parameters on every parameterized layer")
    }

    /// Gradients of a scalar loss with respect to every parameter, given
    /// `dlogits = d loss / d logits` and the cache of the matching forward.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients> {
        self.check_cache(cache)?;
        let batch = cache.batch_size();
        if dlogits.shape() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "dlogits is {}x{}, expected {}x{}",
                dlogits.rows(),
                dlogits.cols(),
                batch,
                self.output_dim()
            )));
        }
        let first_param = self.spec.layers.iter().position(LayerSpec::has_params);
        let mut grads: Gradients = vec![None; self.params.len()];
        let mut upstream = dlogits.clone();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            // Nothing below the first parameterized layer needs a gradient.
            let need_input = first_param.is_some_and(|f| i > f);
            let input = &cache.activations[i];
            let output = &cache.activations[i + 1];
            match *layer {
                LayerSpec::Dense { activation, .. } => {
                    let p = self.param(i);
                    if activation == Activation::Relu {
                        // Subgradient 0 at the kink: relu output > 0 iff input > 0.
                        upstream
                            .as_mut_slice()
                            .iter_mut()
                            .zip(output.as_slice())
                            .for_each(|(g, &y)| {
                                if y <= 0.0 {
                                    *g = 0.0;
                                }
                            });
                    }
                    let mut dw = Matrix::zeros(p.weight.rows(), p.weight.cols());
                    matmul_into(&upstream.transpose(), input, &mut dw);
                    let db = p.bias.as_ref().map(|_| column_sums(&upstream));
                    grads[i] = Some(Param {
                        weight: dw,
                        bias: db,
                    });
                    if need_input {
                        let mut dx = Matrix::zeros(batch, p.weight.cols());
                        matmul_into(&upstream, &p.weight, &mut dx);
                        upstream = dx;
                    }
                }
                LayerSpec::Dropout { .. } => {
                    if let LayerAux::DropoutMask(mask) = &cache.aux[i] {
                        upstream
                            .as_mut_slice()
                            .iter_mut()
                            .zip(mask)
                            .for_each(|(g, m)| *g *= m);
                    }
                }
                LayerSpec::Conv2D {
                    kernel_h, kernel_w, ..
                } => {
                    let p = self.param(i);
                    let img = image_shape(cache.shapes[i], i)?;
                    let (dk, db, dx) = conv::conv2d_backward(
                        &p.weight, kernel_h, kernel_w, input, img, &upstream, need_input,
                    )?;
                    grads[i] = Some(Param {
                        weight: dk,
                        bias: Some(db),
                    });
                    if let Some(dx) = dx {
                        upstream = dx;
                    }
                }
                LayerSpec::MaxPool2D { .. } => {
                    let LayerAux::PoolArgmax(argmax) = &cache.aux[i] else {
                        return Err(Error::Contract(format!("cache lacks pooling indices for layer {i}")));
                    };
                    let img = image_shape(cache.shapes[i], i)?;
                    upstream = conv::maxpool_backward(argmax, img, &upstream)?;
                }
                LayerSpec::Flatten => {}
            }
        }
        Ok(grads)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let layers = self.spec.layers.len();
        if cache.activations.len() != layers + 1 || cache.aux.len() != layers {
            return Err(Error::Contract(format!(
                "cache holds {} layers, model has {layers}",
                cache.aux.len()
            )));
        }
        let shapes = self.spec.validate()?;
        if shapes != cache.shapes {
            return Err(Error::Contract("cache was produced by a different network".into()));
        }
        let batch = cache.batch_size();
        for (i, (act, shape)) in cache.activations.iter().zip(&shapes).enumerate() {
            if act.shape() != (batch, shape.size()) {
                return Err(Error::Contract(format!(
                    "cached activation {i} is {}x{}, expected {batch}x{}",
                    act.rows(),
                    act.cols(),
                    shape.size()
                )));
            }
        }
        for (i, (layer, aux)) in self.spec.layers.iter().zip(&cache.aux).enumerate() {
            let ok = match (layer, aux) {
                (LayerSpec::Dropout { .. }, LayerAux::DropoutMask(m)) => {
                    m.len() == batch * shapes[i].size()
                }
                (LayerSpec::MaxPool2D { .. }, LayerAux::PoolArgmax(a)) => {
                    a.len() == batch * shapes[i + 1].size()
                }
                (LayerSpec::MaxPool2D { .. }, LayerAux::None) => false,
                (_, LayerAux::None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Contract(format!("stale cache entry for layer {i}")));
            }
        }
        Ok(())
    }
}

fn image_shape(shape: Shape, index: usize) -> Result<crate::nn::spec::ImageShape> {
    match shape {
        Shape::Image(img) => Ok(img),
        Shape::Flat(_) => Err(Error::Spec {
            index,
            reason: "spatial layer on flat activations".into(),
        }),
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for row in m.row_iter() {
        sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    sums
}

/// Glorot-uniform weights, zero biases.
///
/// Dense fans are `(input, output)`; conv fans are
/// `(in_ch * kh * kw, out_ch * kh * kw)`.
pub fn init_params(spec: &NetworkSpec, rng: &mut RngStream) -> Result<Model> {
    spec.validate()?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let fans = match *layer {
            LayerSpec::Dense { input, output, .. } => Some((input, output)),
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => {
                let area = kernel_h * kernel_w;
                Some((in_channels * area, out_channels * area))
            }
            _ => None,
        };
        let p = match (fans, layer.param_shapes()) {
            (Some((fan_in, fan_out)), Some(((r, c), nb))) => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..r * c).map(|_| rng.uniform(-limit, limit)).collect();
                Some(Param {
                    weight: Matrix::from_vec_unchecked(r, c, data),
                    bias: (nb > 0).then(|| vec![0.0; nb]),
                })
            }
            _ => None,
        };
        params.push(p);
    }
    Model::from_parts(spec.clone(), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{ImageShape, LayerSpec, Shape};

    fn dense_model(weights: &[(&[&[f64]], Option<&[f64]>, Activation)], input: usize) -> Model {
        let mut layers = Vec::new();
        let mut params = Vec::new();
        for (w, b, act) in weights {
            let w = Matrix::from_rows(w).unwrap();
            layers.push(LayerSpec::Dense {
                input: w.cols(),
                output: w.rows(),
                activation: *act,
                bias: b.is_some(),
            });
            params.push(Some(Param {
                weight: w,
                bias: b.map(<[f64]>::to_vec),
            }));
        }
        let out = params.last().unwrap().as_ref().unwrap().weight.rows();
        let spec = NetworkSpec::new(Shape::Flat(input), layers, out).unwrap();
        Model::from_parts(spec, params).unwrap()
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let spec = NetworkSpec::new(Shape::Flat(2), vec![LayerSpec::linear(2, 3)], 3).unwrap();
        let m = init_params(&spec, &mut RngStream::new(1)).unwrap();
        let p = m.params()[0].as_ref().unwrap();
        assert_eq!(p.weight.shape(), (3, 2));
        assert_eq!(p.bias.as_deref(), Some(&[0.0, 0.0, 0.0][..]));
        assert_eq!(m.param_count(), spec.param_count());
    }

    #[test]
    fn init_is_deterministic() {
        let spec = NetworkSpec::mlp(5, &[7, 4], 3, 0.1).unwrap();
        let a = init_params(&spec, &mut RngStream::new(99)).unwrap();
        let b = init_params(&spec, &mut RngStream::new(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_weight_spread_matches_uniform_variance() {
        let spec =
            NetworkSpec::new(Shape::Flat(1000), vec![LayerSpec::linear(1000, 1000)], 1000).unwrap();
        let m = init_params(&spec, &mut RngStream::new(7)).unwrap();
        let w = m.params()[0].as_ref().unwrap().weight.as_slice();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // Uniform(-a, a) has std a / sqrt(3).
        let expected = (6.0f64 / 2000.0).sqrt() / 3f64.sqrt();
        assert!((std / expected - 1.0).abs() < 0.1, "std {std} vs {expected}");
    }

    #[test]
    fn identity_network_forward() {
        let m = dense_model(
            &[(&[&[1.0, 0.0], &[0.0, 1.0]], Some(&[0.0, 0.0]), Activation::Identity)],
            2,
        );
        let x = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let (y, _) = m.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_clamps() {
        // A trailing identity layer keeps the ReLU layer a hidden layer.
        let m = dense_model(
            &[
                (&[&[1.0, 0.0], &[0.0, 1.0]], Some(&[0.0, 0.0]), Activation::Relu),
                (&[&[1.0, 0.0], &[0.0, 1.0]], None, Activation::Identity),
            ],
            2,
        );
        let x = Matrix::from_rows(&[[-1.0, 5.0]]).unwrap();
        let (y, cache) = m.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(cache.activations()[1].as_slice(), &[0.0, 5.0]);
        assert_eq!(y.as_slice(), &[0.0, 5.0]);
    }

    #[test]
    fn bottleneck_composition() {
        let m = dense_model(
            &[
                (&[&[1.0, 1.0]], None, Activation::Identity),
                (&[&[1.0], &[2.0]], Some(&[0.0, 0.0]), Activation::Relu),
                (&[&[1.0, 0.0], &[0.0, 1.0]], None, Activation::Identity),
            ],
            2,
        );
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (_, cache) = m.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(cache.activations()[2].as_slice(), &[3.0, 6.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = dense_model(&[(&[&[1.0, 0.0]], None, Activation::Identity)], 2);
        let x = Matrix::zeros(1, 3);
        assert!(matches!(
            m.forward(&x, Mode::Eval, &mut RngStream::new(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn eval_mode_draws_no_randomness() {
        let spec = NetworkSpec::mlp(3, &[4], 2, 0.5).unwrap();
        let m = init_params(&spec, &mut RngStream::new(1)).unwrap();
        let x = Matrix::filled(2, 3, 1.0);
        let mut rng = RngStream::new(5);
        m.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(rng, RngStream::new(5));
        assert_eq!(m.predict(&x).unwrap(), m.forward(&x, Mode::Eval, &mut rng).unwrap().0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = NetworkSpec::mlp(3, &[4, 4], 2, 0.2).unwrap();
        let m = init_params(&spec, &mut RngStream::new(3)).unwrap();
        let x = Matrix::filled(5, 3, 0.3);
        let (_, cache) = m.forward(&x, Mode::Train, &mut RngStream::new(4)).unwrap();
        let grads = m.backward(&cache, &Matrix::zeros(5, 2)).unwrap();
        for g in grads.iter().flatten() {
            assert!(g.weight.as_slice().iter().all(|&v| v == 0.0));
            assert!(g.bias.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let (w, x, g) = (1.7, 0.4, -2.5);
        let m = dense_model(&[(&[&[w]], Some(&[0.3]), Activation::Identity)], 1);
        let input = Matrix::from_rows(&[[x]]).unwrap();
        let (_, cache) = m.forward(&input, Mode::Train, &mut RngStream::new(0)).unwrap();
        let grads = m.backward(&cache, &Matrix::from_rows(&[[g]]).unwrap()).unwrap();
        let p = grads[0].as_ref().unwrap();
        assert_eq!(p.weight.as_slice(), &[g * x]);
        assert_eq!(p.bias.as_deref(), Some(&[g][..]));
    }

    #[test]
    fn mismatched_cache_is_contract_error() {
        let a = init_params(&NetworkSpec::mlp(3, &[4], 2, 0.0).unwrap(), &mut RngStream::new(1)).unwrap();
        let b = init_params(&NetworkSpec::mlp(3, &[5], 2, 0.0).unwrap(), &mut RngStream::new(1)).unwrap();
        let x = Matrix::filled(2, 3, 1.0);
        let (_, cache) = a.forward(&x, Mode::Train, &mut RngStream::new(0)).unwrap();
        assert!(matches!(
            b.backward(&cache, &Matrix::zeros(2, 2)),
            Err(Error::Contract(_))
        ));

        let dropout = init_params(&NetworkSpec::mlp(3, &[4], 2, 0.5).unwrap(), &mut RngStream::new(1)).unwrap();
        let no_dropout = init_params(&NetworkSpec::mlp(3, &[4], 2, 0.0).unwrap(), &mut RngStream::new(1)).unwrap();
        let (_, cache) = no_dropout.forward(&x, Mode::Train, &mut RngStream::new(0)).unwrap();
        assert!(matches!(
            dropout.backward(&cache, &Matrix::zeros(2, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // Linear network: E[train output] equals the eval output.
        let spec = NetworkSpec::new(
            Shape::Flat(4),
            vec![LayerSpec::Dropout { rate: 0.3 }, LayerSpec::linear(4, 2)],
            2,
        )
        .unwrap();
        let m = init_params(&spec, &mut RngStream::new(8)).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5, 3.0]]).unwrap();
        let eval = m.predict(&x).unwrap();
        let mut rng = RngStream::new(21);
        let draws = 20_000;
        let mut mean = [0.0; 2];
        for _ in 0..draws {
            let (y, _) = m.forward(&x, Mode::Train, &mut rng).unwrap();
            mean[0] += y.get(0, 0) / draws as f64;
            mean[1] += y.get(0, 1) / draws as f64;
        }
        for c in 0..2 {
            let e = eval.get(0, c);
            assert!((mean[c] - e).abs() <= 0.02 * e.abs(), "{} vs {e}", mean[c]);
        }
    }

    #[test]
    fn conv_network_forward_shapes() {
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
                LayerSpec::linear(8, 3),
            ],
            3,
        )
        .unwrap();
        let m = init_params(&spec, &mut RngStream::new(2)).unwrap();
        let x = Matrix::filled(4, 25, 0.5);
        let (y, _) = m.forward(&x, Mode::Train, &mut RngStream::new(0)).unwrap();
        assert_eq!(y.shape(), (4, 3));
    }
}
