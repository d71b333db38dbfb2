//! Versioned little-endian binary checkpoints.
//!
//! Every file starts with a 4-byte magic and a `u16` format version. A
//! serialized network is a `u32` layer count followed by, per layer, a `u8`
//! kind tag, its hyperparameters as `u32`s and its parameter payloads as
//! length-prefixed `f64` arrays. Classifier checkpoints use the magic
//! `SSNN`; other artifacts embed networks under their own magic.

use std::path::Path;

use super::{Conv2d, Dense, Layer, Network, Tensor};
use crate::error::{FrameError, Result};

pub const NETWORK_MAGIC: &[u8; 4] = b"SSNN";
pub const FORMAT_VERSION: u16 = 1;

const TAG_DENSE: u8 = 1;
const TAG_CONV2D: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_MAXPOOL: u8 = 4;
const TAG_FLATTEN: u8 = 5;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u16(FORMAT_VERSION);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.usize(t.shape().len());
        for &d in t.shape() {
            self.usize(d);
        }
        self.f64s(t.data());
    }

    pub fn network(&mut self, net: &Network) {
        self.usize(net.len());
        for layer in net.layers() {
            match layer {
                Layer::Dense(d) => {
                    self.u8(TAG_DENSE);
                    self.usize(d.inputs());
                    self.usize(d.outputs());
                    self.f64s(d.weight.data());
                    self.f64s(d.bias.data());
                }
                Layer::Conv2d(c) => {
                    self.u8(TAG_CONV2D);
                    for v in [c.in_channels, c.out_channels, c.kernel, c.stride, c.padding] {
                        self.usize(v);
                    }
                    self.f64s(c.weight.data());
                    self.f64s(c.bias.data());
                }
                Layer::Relu => self.u8(TAG_RELU),
                Layer::MaxPool2d { size, stride } => {
                    self.u8(TAG_MAXPOOL);
                    self.usize(*size);
                    self.usize(*stride);
                }
                Layer::Flatten => self.u8(TAG_FLATTEN),
            }
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and positions the reader after them.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self, FrameError> {
        if bytes.len() < 4 {
            return Err(FrameError::Truncated {
                needed: 6,
                have: bytes.len(),
            });
        }
        if &bytes[..4] != magic {
            return Err(FrameError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let mut r = Self { bytes, pos: 4 };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(FrameError::Version(version));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self.pos.checked_add(n).ok_or(FrameError::Truncated {
            needed: usize::MAX,
            have: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(FrameError::Truncated {
                needed: end,
                have: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, FrameError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize, FrameError> {
        Ok(self.u32()? as usize)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, FrameError> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| FrameError::Malformed("array too large".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn str(&mut self) -> Result<String, FrameError> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FrameError::Malformed("invalid utf-8 string".into()))
    }

    pub fn tensor(&mut self) -> Result<Tensor, FrameError> {
        let rank = self.usize()?;
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>, _>>()?;
        let data = self.f64s()?;
        Tensor::new(shape, data).map_err(|e| FrameError::Malformed(e.to_string()))
    }

    fn shaped(&mut self, shape: Vec<usize>) -> Result<Tensor, FrameError> {
        let data = self.f64s()?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(FrameError::Length {
                declared: expected,
                actual: data.len(),
            });
        }
        Tensor::new(shape, data).map_err(|e| FrameError::Malformed(e.to_string()))
    }

    pub fn network(&mut self) -> Result<Network, FrameError> {
        let count = self.usize()?;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let layer = match self.u8()? {
                TAG_DENSE => {
                    let (inputs, outputs) = (self.usize()?, self.usize()?);
                    let weight = self.shaped(vec![outputs, inputs])?;
                    let bias = self.shaped(vec![outputs])?;
                    Layer::Dense(Dense { weight, bias })
                }
                TAG_CONV2D => {
                    let [in_channels, out_channels, kernel, stride, padding] =
                        [self.usize()?, self.usize()?, self.usize()?, self.usize()?, self.usize()?];
                    let weight = self.shaped(vec![out_channels, in_channels, kernel, kernel])?;
                    let bias = self.shaped(vec![out_channels])?;
                    Layer::Conv2d(Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        weight,
                        bias,
                    })
                }
                TAG_RELU => Layer::Relu,
                TAG_MAXPOOL => Layer::MaxPool2d {
                    size: self.usize()?,
                    stride: self.usize()?,
                },
                TAG_FLATTEN => Layer::Flatten,
                tag => return Err(FrameError::Malformed(format!("unknown layer tag {tag}"))),
            };
            layers.push(layer);
        }
        Ok(Network::new(layers))
    }

    /// Errors if bytes remain after the last field.
    pub fn finish(self) -> Result<(), FrameError> {
        if self.pos != self.bytes.len() {
            return Err(FrameError::Length {
                declared: self.pos,
                actual: self.bytes.len(),
            });
        }
        Ok(())
    }
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut w = Writer::new(NETWORK_MAGIC);
    w.network(net);
    w.finish()
}

pub fn decode_network(bytes: &[u8]) -> Result<Network, FrameError> {
    let mut r = Reader::open(bytes, NETWORK_MAGIC)?;
    let net = r.network()?;
    r.finish()?;
    Ok(net)
}

pub fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample_net() -> Network {
        let mut r = rng::seeded(11);
        Network::new(vec![
            Layer::Conv2d(Conv2d::new(2, 3, 3, 1, 1, &mut r)),
            Layer::Relu,
            Layer::MaxPool2d { size: 2, stride: 2 },
            Layer::Flatten,
            Layer::Dense(Dense::new(12, 4, &mut r)),
        ])
    }

    #[test]
    fn network_round_trip_is_bit_exact() {
        let net = sample_net();
        let bytes = encode_network(&net);
        assert_eq!(&bytes[..4], b"SSNN");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        let back = decode_network(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_network(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode_network(&sample_net());
        assert!(matches!(decode_network(b"XXNN\x01\x00"), Err(FrameError::BadMagic { .. })));
        let mut v = bytes.clone();
        v[4] = 9;
        assert_eq!(decode_network(&v), Err(FrameError::Version(9)));
        assert!(matches!(
            decode_network(&bytes[..bytes.len() - 3]),
            Err(FrameError::Truncated { .. })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_network(&extra), Err(FrameError::Length { .. })));
    }
}
