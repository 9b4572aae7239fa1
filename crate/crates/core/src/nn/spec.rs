use std::fmt;

use crate::error::{Error, Result};

/// Elementwise activation applied by a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// One layer of a network description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Affine map `activation(W x + b)` with `W` stored as `[output x input]`.
    /// With `Identity` activation and no bias this is a linear bottleneck.
    Dense {
        input: usize,
        output: usize,
        activation: Activation,
        bias: bool,
    },
    /// Inverted dropout; `rate` is the drop probability.
    Dropout { rate: f64 },
    /// Valid cross-correlation, stride 1.
    Conv2D {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    /// Non-overlapping max pooling; ragged edges are dropped.
    MaxPool2D { pool_h: usize, pool_w: usize },
    Flatten,
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            input,
            output,
            activation,
            bias: true,
        }
    }

    pub fn relu(input: usize, output: usize) -> Self {
        Self::dense(input, output, Activation::Relu)
    }

    pub fn linear(input: usize, output: usize) -> Self {
        Self::dense(input, output, Activation::Identity)
    }

    /// Bias-free identity layer with `width` units.
    pub fn bottleneck(input: usize, width: usize) -> Self {
        LayerSpec::Dense {
            input,
            output: width,
            activation: Activation::Identity,
            bias: false,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2D { .. })
    }

    /// Weight shape `(rows, cols)` and bias length, for parameterized layers.
    pub fn param_shapes(&self) -> Option<((usize, usize), usize)> {
        match *self {
            LayerSpec::Dense {
                input,
                output,
                bias,
                ..
            } => Some(((output, input), if bias { output } else { 0 })),
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => Some((
                (out_channels, in_channels * kernel_h * kernel_w),
                out_channels,
            )),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map_or(0, |((r, c), b)| r * c + b)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense {
                input,
                output,
                activation,
                bias,
            } => {
                let act = match activation {
                    Activation::Identity => "linear",
                    Activation::Relu => "relu",
                };
                let bias = if *bias { "" } else { ", no bias" };
                write!(f, "Dense({input}->{output}, {act}{bias})")
            }
            LayerSpec::Dropout { rate } => write!(f, "Dropout({rate})"),
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => write!(
                f,
                "Conv2D({in_channels}->{out_channels}, {kernel_h}x{kernel_w})"
            ),
            LayerSpec::MaxPool2D { pool_h, pool_w } => write!(f, "MaxPool2D({pool_h}x{pool_w})"),
            LayerSpec::Flatten => write!(f, "Flatten"),
        }
    }
}

/// Channel-major image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Shape of the activations flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image(ImageShape),
}

impl Shape {
    pub fn size(&self) -> usize {
        match self {
            Shape::Flat(d) => *d,
            Shape::Image(s) => s.size(),
        }
    }
}

/// Declarative description of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_shape,
            layers,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ReLU MLP `input -> hidden... -> output`, with dropout after each
    /// hidden layer when `dropout > 0`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, dropout: f64) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::relu(prev, h));
            if dropout > 0.0 {
                layers.push(LayerSpec::Dropout { rate: dropout });
            }
            prev = h;
        }
        layers.push(LayerSpec::linear(prev, output));
        Self::new(Shape::Flat(input), layers, output)
    }

    /// One ReLU hidden layer of width `hidden`, optionally preceded by a
    /// bias-free linear bottleneck of width `bottleneck`.
    pub fn shallow(
        input: usize,
        hidden: usize,
        bottleneck: Option<usize>,
        output: usize,
        dropout: f64,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input;
        if let Some(k) = bottleneck {
            layers.push(LayerSpec::bottleneck(input, k));
            prev = k;
        }
        layers.push(LayerSpec::relu(prev, hidden));
        if dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: dropout });
        }
        layers.push(LayerSpec::linear(hidden, output));
        Self::new(Shape::Flat(input), layers, output)
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.size()
    }

    /// Checks that layers chain and returns the activation shape after each
    /// layer (`shapes[0]` is the input shape).
    pub fn validate(&self) -> Result<Vec<Shape>> {
        let spec_err = |index: usize, reason: String| Error::Spec { index, reason };
        let mut shapes = vec![self.input_shape];
        let mut current = self.input_shape;
        let mut flattened = matches!(current, Shape::Flat(_));
        let last_param = self.layers.iter().rposition(LayerSpec::has_params);
        let mut bottlenecks = 0;

        if current.size() == 0 {
            return Err(spec_err(0, "input shape has zero size".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            current = match (*layer, current) {
                (
                    LayerSpec::Dense {
                        input,
                        output,
                        activation,
                        ..
                    },
                    Shape::Flat(d),
                ) => {
                    if input != d {
                        return Err(spec_err(
                            i,
                            format!("{layer} expects {input} inputs, previous layer yields {d}"),
                        ));
                    }
                    if output == 0 {
                        return Err(spec_err(i, "dense layer with zero outputs".into()));
                    }
                    if activation == Activation::Identity && Some(i) != last_param {
                        bottlenecks += 1;
                        if bottlenecks > 1 {
                            return Err(spec_err(i, "more than one linear bottleneck".into()));
                        }
                    }
                    Shape::Flat(output)
                }
                (LayerSpec::Dense { .. }, Shape::Image(_)) => {
                    return Err(spec_err(i, "dense layer on image activations needs Flatten".into()))
                }
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(spec_err(i, format!("dropout rate {rate} outside [0, 1)")));
                    }
                    s
                }
                (
                    LayerSpec::Conv2D {
                        in_channels,
                        out_channels,
                        kernel_h,
                        kernel_w,
                    },
                    Shape::Image(img),
                ) => {
                    if flattened {
                        return Err(spec_err(i, "Conv2D after Flatten".into()));
                    }
                    if in_channels != img.channels {
                        return Err(spec_err(
                            i,
                            format!("{layer} expects {in_channels} channels, got {}", img.channels),
                        ));
                    }
                    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(spec_err(i, format!("degenerate {layer}")));
                    }
                    if kernel_h > img.height || kernel_w > img.width {
                        return Err(spec_err(
                            i,
                            format!("kernel {kernel_h}x{kernel_w} larger than {}x{} input", img.height, img.width),
                        ));
                    }
                    Shape::Image(ImageShape::new(
                        out_channels,
                        img.height - kernel_h + 1,
                        img.width - kernel_w + 1,
                    ))
                }
                (LayerSpec::MaxPool2D { pool_h, pool_w }, Shape::Image(img)) => {
                    if flattened {
                        return Err(spec_err(i, "MaxPool2D after Flatten".into()));
                    }
                    if pool_h == 0 || pool_w == 0 || pool_h > img.height || pool_w > img.width {
                        return Err(spec_err(
                            i,
                            format!("pool {pool_h}x{pool_w} does not fit {}x{} input", img.height, img.width),
                        ));
                    }
                    Shape::Image(ImageShape::new(img.channels, img.height / pool_h, img.width / pool_w))
                }
                (LayerSpec::Conv2D { .. } | LayerSpec::MaxPool2D { .. }, Shape::Flat(_)) => {
                    return Err(spec_err(i, format!("{layer} needs image activations")))
                }
                (LayerSpec::Flatten, s) => {
                    flattened = true;
                    Shape::Flat(s.size())
                }
            };
            shapes.push(current);
        }
        match (last_param, current) {
            (None, _) => Err(spec_err(0, "network has no parameterized layer".into())),
            (Some(i), Shape::Flat(d)) if d == self.output_dim => {
                if !matches!(self.layers[i], LayerSpec::Dense { .. }) {
                    return Err(spec_err(i, "last parameterized layer must be Dense".into()));
                }
                Ok(shapes)
            }
            (Some(i), s) => Err(spec_err(
                i,
                format!("network ends in {s:?}, expected {} outputs", self.output_dim),
            )),
        }
    }

    /// Total weight and bias elements.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Non-linear (ReLU) hidden units and linear bottleneck units, counted
    /// separately. Output units are excluded.
    pub fn hidden_units(&self) -> (usize, usize) {
        let last_param = self.layers.iter().rposition(LayerSpec::has_params);
        let mut nonlinear = 0;
        let mut linear = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if Some(i) == last_param {
                continue;
            }
            if let LayerSpec::Dense {
                output, activation, ..
            } = layer
            {
                match activation {
                    Activation::Relu => nonlinear += output,
                    Activation::Identity => linear += output,
                }
            }
        }
        (nonlinear, linear)
    }

    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

/// Parameter count of a spec; the sum of weight and bias elements.
pub fn param_count(spec: &NetworkSpec) -> usize {
    spec.param_count()
}
