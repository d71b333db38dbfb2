use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, FrameError, Result};
use crate::nn::Tensor;
use crate::{par, rng};

/// Labeled images, each `[channels, height, width]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ImageDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ImageDataset {
        let end = end.min(self.len());
        let start = start.min(end);
        ImageDataset {
            images: self.images[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
            num_classes: self.num_classes,
        }
    }
}

/// Raw IDX payload (unsigned-byte element type only).
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_U8: u8 = 0x08;

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated {
            needed: 4,
            have: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(FrameError::BadMagic {
            expected: "00 00 <type> <ndims>".into(),
            found: format!("{:02x} {:02x} {:02x} {:02x}", bytes[0], bytes[1], bytes[2], bytes[3]),
        });
    }
    if bytes[2] != IDX_U8 {
        return Err(FrameError::Dtype(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(FrameError::Truncated {
            needed: header,
            have: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FrameError::Malformed("IDX dimensions overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(FrameError::Truncated {
            needed: header + count,
            have: bytes.len(),
        });
    }
    if payload.len() > count {
        return Err(FrameError::Length {
            declared: count,
            actual: payload.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

/// Reads an IDX image file (`n x rows x cols`) into `[1, rows, cols]`
/// tensors scaled to `[0, 1]`. Never touches a label file.
pub fn load_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    let arr = parse_idx(&std::fs::read(path)?)?;
    if arr.dims.len() != 3 {
        return Err(FrameError::Malformed(format!("image file has {} dimensions, expected 3", arr.dims.len())).into());
    }
    let (rows, cols) = (arr.dims[1], arr.dims[2]);
    let per = rows * cols;
    arr.data
        .chunks_exact(per.max(1))
        .map(|px| Tensor::new(vec![1, rows, cols], px.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect()
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<ImageDataset> {
    let imgs = load_idx_images(images)?;
    let lab = parse_idx(&std::fs::read(labels)?)?;
    if lab.dims.len() != 1 {
        return Err(FrameError::Malformed(format!("label file has {} dimensions, expected 1", lab.dims.len())).into());
    }
    if lab.dims[0] != imgs.len() {
        return Err(Error::Config(format!(
            "label count {} != image count {}",
            lab.dims[0],
            imgs.len()
        )));
    }
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    ImageDataset::new(imgs, labels, num_classes)
}

pub const SYNTHETIC_SHAPE: [usize; 3] = [3, 32, 32];

/// Class-conditional stripe-and-blob images of shape `3 x 32 x 32`.
///
/// Class `c` fixes the stripe orientation, stripe frequency and color mix;
/// each sample draws a random phase, contrast, blob position and pixel
/// noise. Labels cycle through the classes, so any prefix is balanced.
pub fn gen_synthetic(classes: usize, n: usize, seed: u64) -> Result<ImageDataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let [ch, h, w] = SYNTHETIC_SHAPE;
    let images = par::map_range(n, |i| {
        let label = i % classes;
        let mut r = rng::stream(seed, i as u64);
        let theta = PI * label as f64 / classes as f64;
        let freq = 2.0 * PI / (5.0 + 2.0 * (label % 3) as f64);
        let hue = 2.0 * PI * label as f64 / classes as f64;
        let color: Vec<f64> = (0..ch).map(|k| 0.6 + 0.4 * (hue + 2.0 * PI * k as f64 / 3.0).cos()).collect();
        let phase: f64 = r.random_range(0.0..2.0 * PI);
        let contrast: f64 = r.random_range(0.25..0.4);
        let (by, bx): (f64, f64) = (r.random_range(6.0..26.0), r.random_range(6.0..26.0));
        let blob_ch = label % ch;
        let noise = Normal::new(0.0, 0.08).expect("valid std");
        let (s, c) = theta.sin_cos();
        let mut data = Vec::with_capacity(ch * h * w);
        for k in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    let (yf, xf) = (y as f64, x as f64);
                    let stripe = (freq * (xf * c + yf * s) + phase).sin();
                    let d2 = (yf - by).powi(2) + (xf - bx).powi(2);
                    let blob = if k == blob_ch { 0.3 * (-d2 / 18.0).exp() } else { 0.0 };
                    let v = 0.5 + contrast * stripe * color[k] + blob + noise.sample(&mut r);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        (Tensor::new(SYNTHETIC_SHAPE.to_vec(), data).expect("consistent shape"), label)
    });
    let (images, labels) = images.into_iter().unzip();
    ImageDataset::new(images, labels, classes)
}
