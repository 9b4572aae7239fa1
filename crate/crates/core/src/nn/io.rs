//! Versioned binary model format.
//!
//! All integers are little-endian `u32`, reals are little-endian `f64`.
//!
//! ```text
//! "SMIM"                      magic
//! u32 version                 currently 1
//! input shape                 u8 tag: 0 = flat (u32 dim)
//!                                     1 = image (u32 channels, height, width)
//! u32 output_dim
//! u32 layer_count, then per layer a u8 tag and its fields:
//!   0 Dense      u32 input, u32 output, u8 activation (0 identity, 1 relu), u8 bias
//!   1 Dropout    f64 rate
//!   2 Conv2D     u32 in_channels, out_channels, kernel_h, kernel_w
//!   3 MaxPool2D  u32 pool_h, pool_w
//!   4 Flatten
//! parameters in layer order: weight (row-major), then bias when present
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::{Model, Param};
use crate::nn::spec::{Activation, ImageShape, LayerSpec, NetworkSpec, Shape};
use crate::numerics::Matrix;

pub const MODEL_MAGIC: &[u8; 4] = b"SMIM";
pub const FORMAT_VERSION: u32 = 1;

/// Little-endian writer shared by the model and preprocessing sidecars.
#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn header(magic: &[u8; 4]) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, positioning after them.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let got = r.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated input at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = self.spec();
        let mut w = Writer::header(MODEL_MAGIC);
        match spec.input_shape {
            Shape::Flat(d) => {
                w.u8(0);
                w.usize(d)?;
            }
            Shape::Image(img) => {
                w.u8(1);
                w.usize(img.channels)?;
                w.usize(img.height)?;
                w.usize(img.width)?;
            }
        }
        w.usize(spec.output_dim)?;
        w.usize(spec.layers.len())?;
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Dense {
                    input,
                    output,
                    activation,
                    bias,
                } => {
                    w.u8(0);
                    w.usize(input)?;
                    w.usize(output)?;
                    w.u8(match activation {
                        Activation::Identity => 0,
                        Activation::Relu => 1,
                    });
                    w.u8(bias as u8);
                }
                LayerSpec::Dropout { rate } => {
                    w.u8(1);
                    w.f64(rate);
                }
                LayerSpec::Conv2D {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                } => {
                    w.u8(2);
                    for v in [in_channels, out_channels, kernel_h, kernel_w] {
                        w.usize(v)?;
                    }
                }
                LayerSpec::MaxPool2D { pool_h, pool_w } => {
                    w.u8(3);
                    w.usize(pool_h)?;
                    w.usize(pool_w)?;
                }
                LayerSpec::Flatten => w.u8(4),
            }
        }
        for p in self.params().iter().flatten() {
            w.f64s(p.weight.as_slice());
            if let Some(b) = &p.bias {
                w.f64s(b);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader::open(bytes, MODEL_MAGIC)?;
        let input_shape = match r.u8()? {
            0 => Shape::Flat(r.usize()?),
            1 => Shape::Image(ImageShape::new(r.usize()?, r.usize()?, r.usize()?)),
            t => return Err(Error::Format(format!("unknown input shape tag {t}"))),
        };
        let output_dim = r.usize()?;
        let count = r.usize()?;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let layer = match r.u8()? {
                0 => {
                    let input = r.usize()?;
                    let output = r.usize()?;
                    let activation = match r.u8()? {
                        0 => Activation::Identity,
                        1 => Activation::Relu,
                        a => return Err(Error::Format(format!("unknown activation tag {a}"))),
                    };
                    let bias = match r.u8()? {
                        0 => false,
                        1 => true,
                        b => return Err(Error::Format(format!("bad bias flag {b}"))),
                    };
                    LayerSpec::Dense {
                        input,
                        output,
                        activation,
                        bias,
                    }
                }
                1 => LayerSpec::Dropout { rate: r.f64()? },
                2 => LayerSpec::Conv2D {
                    in_channels: r.usize()?,
                    out_channels: r.usize()?,
                    kernel_h: r.usize()?,
                    kernel_w: r.usize()?,
                },
                3 => LayerSpec::MaxPool2D {
                    pool_h: r.usize()?,
                    pool_w: r.usize()?,
                },
                4 => LayerSpec::Flatten,
                t => return Err(Error::Format(format!("unknown layer tag {t}"))),
            };
            layers.push(layer);
        }
        let spec = NetworkSpec::new(input_shape, layers, output_dim)?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            params.push(match layer.param_shapes() {
                Some(((rows, cols), nb)) => {
                    let weight = Matrix::new(rows, cols, r.f64s(rows * cols)?)?;
                    let bias = if nb > 0 { Some(r.f64s(nb)?) } else { None };
                    Some(Param { weight, bias })
                }
                None => None,
            });
        }
        r.finish()?;
        Model::from_parts(spec, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::init_params;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn conv_spec() -> NetworkSpec {
        NetworkSpec::new(
            Shape::Image(ImageShape::new(2, 6, 6)),
            vec![
                LayerSpec::Conv2D {
                    in_channels: 2,
                    out_channels: 3,
                    kernel_h: 3,
                    kernel_w: 2,
                },
                LayerSpec::MaxPool2D { pool_h: 2, pool_w: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::bottleneck(12, 4),
                LayerSpec::relu(4, 9),
                LayerSpec::linear(9, 5),
            ],
            5,
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let m = init_params(&conv_spec(), &mut RngStream::new(1)).unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SMIM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes[8], 1);
    }

    #[test]
    fn rejects_corruption() {
        let m = init_params(&conv_spec(), &mut RngStream::new(1)).unwrap();
        let bytes = m.to_bytes().unwrap();
        assert!(matches!(Model::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Model::from_bytes(&extra), Err(Error::Format(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Model::from_bytes(&magic), Err(Error::Format(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(Model::from_bytes(&version), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bit_exact_round_trip(seed in any::<u64>(), hidden in 1usize..12, bottleneck in prop::option::of(1usize..4)) {
            let spec = NetworkSpec::shallow(7, hidden, bottleneck, 3, 0.1).unwrap();
            let model = init_params(&spec, &mut RngStream::new(seed)).unwrap();
            let bytes = model.to_bytes().unwrap();
            let back = Model::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert_eq!(back, model);
        }
    }

    #[test]
    fn conv_model_round_trip() {
        let model = init_params(&conv_spec(), &mut RngStream::new(77)).unwrap();
        let back = Model::from_bytes(&model.to_bytes().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
