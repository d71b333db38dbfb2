use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer, `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// 2-D convolution over `[channels, height, width]` inputs with square
/// kernels and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2d { size: usize, stride: usize },
    Flatten,
}

fn he_normal(fan_in: usize, shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

impl Dense {
    /// He-initialized dense layer with zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: he_normal(inputs, &[outputs, inputs], rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Config(format!(
                "dense weight {:?} and bias {:?} disagree",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: he_normal(
                in_channels * kernel * kernel,
                &[out_channels, in_channels, kernel, kernel],
                rng,
            ),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel || self.stride == 0 {
            return None;
        }
        Some(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }
}

fn pool_out(size: usize, stride: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    if size == 0 || stride == 0 || h < size || w < size {
        return None;
    }
    Some(((h - size) / stride + 1, (w - size) / stride + 1))
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(Error::shape("dense", &[d.inputs()], input));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels {
                    return Err(Error::shape("conv2d", &[c.in_channels, 0, 0], input));
                }
                let (oh, ow) = c
                    .out_hw(input[1], input[2])
                    .ok_or_else(|| Error::shape("conv2d", &[c.in_channels, c.kernel, c.kernel], input))?;
                Ok(vec![c.out_channels, oh, ow])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { size, stride } => {
                if input.len() != 3 {
                    return Err(Error::shape("maxpool2d", &[0, *size, *size], input));
                }
                let (oh, ow) = pool_out(*size, *stride, input[1], input[2])
                    .ok_or_else(|| Error::shape("maxpool2d", &[input[0], *size, *size], input))?;
                Ok(vec![input[0], oh, ow])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let x = input.data();
        let out = match self {
            Layer::Dense(d) => {
                let (n_in, w, b) = (d.inputs(), d.weight.data(), d.bias.data());
                b.iter()
                    .enumerate()
                    .map(|(o, &bo)| {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        bo + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect()
            }
            Layer::Conv2d(c) => conv_forward(c, input.shape(), x, &out_shape),
            Layer::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Layer::MaxPool2d { size, stride } => {
                pool_argmax(*size, *stride, input.shape(), x, &out_shape)
                    .into_iter()
                    .map(|i| x[i])
                    .collect()
            }
            Layer::Flatten => x.to_vec(),
        };
        Tensor::new(out_shape, out)
    }

    /// Returns the gradient with respect to `input` and the parameter
    /// gradients in [`Layer::params`] order.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let out_shape = self.output_shape(input.shape())?;
        if upstream.shape() != out_shape.as_slice() {
            return Err(Error::shape(
                format!("{} backward", self.name()),
                &out_shape,
                upstream.shape(),
            ));
        }
        let x = input.data();
        let g = upstream.data();
        let in_shape = input.shape().to_vec();
        match self {
            Layer::Dense(d) => {
                let n_in = d.inputs();
                let w = d.weight.data();
                let mut dx = vec![0.0; n_in];
                let mut dw = vec![0.0; w.len()];
                for (o, &go) in g.iter().enumerate() {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let drow = &mut dw[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dx[i] += row[i] * go;
                        drow[i] = go * x[i];
                    }
                }
                Ok((
                    Tensor::new(in_shape, dx)?,
                    vec![
                        Tensor::new(d.weight.shape().to_vec(), dw)?,
                        Tensor::new(vec![g.len()], g.to_vec())?,
                    ],
                ))
            }
            Layer::Conv2d(c) => {
                let (dx, dw, db) = conv_backward(c, &in_shape, x, &out_shape, g);
                Ok((
                    Tensor::new(in_shape, dx)?,
                    vec![
                        Tensor::new(c.weight.shape().to_vec(), dw)?,
                        Tensor::new(vec![c.out_channels], db)?,
                    ],
                ))
            }
            Layer::Relu => {
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                Ok((Tensor::new(in_shape, dx)?, Vec::new()))
            }
            Layer::MaxPool2d { size, stride } => {
                let mut dx = vec![0.0; x.len()];
                for (o, i) in pool_argmax(*size, *stride, &in_shape, x, &out_shape)
                    .into_iter()
                    .enumerate()
                {
                    dx[i] += g[o];
                }
                Ok((Tensor::new(in_shape, dx)?, Vec::new()))
            }
            Layer::Flatten => Ok((Tensor::new(in_shape, g.to_vec())?, Vec::new())),
        }
    }
}

fn conv_forward(c: &Conv2d, in_shape: &[usize], x: &[f64], out_shape: &[usize]) -> Vec<f64> {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let k = c.kernel;
    let wt = c.weight.data();
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for oc in 0..c.out_channels {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(c.bias.data()[oc]);
        for ic in 0..c.in_channels {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((oc * c.in_channels + ic) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, dst) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *dst += wv * src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    c: &Conv2d,
    in_shape: &[usize],
    x: &[f64],
    out_shape: &[usize],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let k = c.kernel;
    let wt = c.weight.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; c.out_channels];
    for oc in 0..c.out_channels {
        let gplane = &g[oc * oh * ow..(oc + 1) * oh * ow];
        db[oc] = gplane.iter().sum();
        for ic in 0..c.in_channels {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            let dsrc = &mut dx[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * c.in_channels + ic) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                let gv = gplane[oy * ow + ox];
                                acc += gv * src[row + ix as usize];
                                dsrc[row + ix as usize] += wv * gv;
                            }
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Flat input index of the maximum in each pooling window. Ties resolve to
/// the first cell in row-major order.
fn pool_argmax(size: usize, stride: usize, in_shape: &[usize], x: &[f64], out_shape: &[usize]) -> Vec<usize> {
    let (ch, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut idx = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let base = c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}
