use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FeatureVector, ImageDataset};
use crate::error::{Error, FrameError, Result};
use crate::nn::checkpoint::{self, Reader, Writer};
use crate::nn::{softmax_confidence, softmax_cross_entropy, Conv2d, Dense, Grads, Layer, Network, Optimizer, Tensor};
use crate::{par, rng};

pub const MODEL_MAGIC: &[u8; 4] = b"SSMD";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

/// A named partition point: the head runs `layers[..index]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutSpec {
    pub label: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `[channels, height, width]`
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    pub cuts: Vec<CutSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPoint {
    pub label: String,
    pub layer_index: usize,
    /// Flattened activation size at the cut.
    pub feature_dim: usize,
    /// Activation shape at the cut, before flattening.
    pub shape: Vec<usize>,
}

impl ModelSpec {
    /// Three conv blocks and a linear classifier, with cuts after each block:
    /// `conv(c->8)-relu-pool | conv(8->16)-relu-pool | conv(16->32)-relu | flatten-dense`.
    pub fn tiny_conv_net(input_shape: [usize; 3], num_classes: usize) -> Self {
        let conv = |out_channels| LayerSpec::Conv2d {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let pool = LayerSpec::MaxPool2d { size: 2, stride: 2 };
        Self {
            name: "tiny-conv-net".into(),
            input_shape: input_shape.to_vec(),
            num_classes,
            layers: vec![
                conv(8),
                LayerSpec::Relu,
                pool.clone(),
                conv(16),
                LayerSpec::Relu,
                pool,
                conv(32),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: num_classes },
            ],
            cuts: vec![
                CutSpec {
                    label: "early".into(),
                    index: 3,
                },
                CutSpec {
                    label: "mid".into(),
                    index: 6,
                },
                CutSpec {
                    label: "deep".into(),
                    index: 8,
                },
            ],
        }
    }

    /// Checks the spec and returns the activation shape after every layer,
    /// starting with the input shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Config(format!("model {} has no layers", self.name)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().expect("non-empty");
            let bad = |msg: String| Error::Config(format!("layer {i}: {msg}"));
            let next = match layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if cur.len() != 3 || *kernel == 0 || *stride == 0 || *out_channels == 0 {
                        return Err(bad(format!("conv2d cannot follow shape {cur:?}")));
                    }
                    let (h, w) = (cur[1] + 2 * padding, cur[2] + 2 * padding);
                    if h < *kernel || w < *kernel {
                        return Err(bad(format!("kernel {kernel} larger than padded input {cur:?}")));
                    }
                    vec![*out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
                LayerSpec::Relu => cur.clone(),
                LayerSpec::MaxPool2d { size, stride } => {
                    if cur.len() != 3 || *size == 0 || *stride == 0 || cur[1] < *size || cur[2] < *size {
                        return Err(bad(format!("maxpool {size} cannot follow shape {cur:?}")));
                    }
                    vec![cur[0], (cur[1] - size) / stride + 1, (cur[2] - size) / stride + 1]
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
                LayerSpec::Dense { units } => {
                    if cur.len() != 1 || *units == 0 {
                        return Err(bad(format!("dense needs a flat input, got {cur:?}")));
                    }
                    vec![*units]
                }
            };
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out != &[self.num_classes] {
            return Err(Error::Config(format!(
                "model output {out:?} does not match {} classes",
                self.num_classes
            )));
        }
        let mut prev = 0;
        for cut in &self.cuts {
            if cut.index == 0 || cut.index >= self.layers.len() {
                return Err(Error::Config(format!(
                    "cut {} at layer {} outside [1, {}]",
                    cut.label,
                    cut.index,
                    self.layers.len() - 1
                )));
            }
            if cut.index <= prev {
                return Err(Error::Config(format!("cut {} is not after the previous cut", cut.label)));
            }
            prev = cut.index;
        }
        Ok(shapes)
    }

    fn cut_points(&self, shapes: &[Vec<usize>]) -> Vec<CutPoint> {
        self.cuts
            .iter()
            .map(|c| CutPoint {
                label: c.label.clone(),
                layer_index: c.index,
                feature_dim: shapes[c.index].iter().product(),
                shape: shapes[c.index].clone(),
            })
            .collect()
    }
}

/// A built classifier. Parameters sit behind an `Arc`, so heads and tails
/// taken from it share storage.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    network: Arc<Network>,
    cuts: Vec<CutPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub class: usize,
    pub confidence: f64,
}

impl Model {
    /// He-initialized model; identical seeds give identical parameters.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut r = rng::seeded(seed);
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, input)| match l {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Layer::Conv2d(Conv2d::new(input[0], *out_channels, *kernel, *stride, *padding, &mut r)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { size, stride } => Layer::MaxPool2d {
                    size: *size,
                    stride: *stride,
                },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { units } => Layer::Dense(Dense::new(input[0], *units, &mut r)),
            })
            .collect();
        let cuts = spec.cut_points(&shapes);
        Ok(Self {
            spec,
            network: Arc::new(Network::new(layers)),
            cuts,
        })
    }

    /// Pairs a spec with stored parameters, checking they agree.
    pub fn from_network(spec: ModelSpec, network: Network) -> Result<Self> {
        let shapes = spec.shapes()?;
        let reference = Model::build(spec.clone(), 0)?;
        let same_layout = network.len() == reference.network.len()
            && network
                .layers()
                .iter()
                .zip(reference.network.layers())
                .all(|(a, b)| a.name() == b.name() && a.params().iter().map(|p| p.shape()).eq(b.params().iter().map(|p| p.shape())));
        if !same_layout {
            return Err(Error::Config(format!("stored network does not match model {}", spec.name)));
        }
        let cuts = spec.cut_points(&shapes);
        Ok(Self {
            spec,
            network: Arc::new(network),
            cuts,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Spec (as JSON) followed by the parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MODEL_MAGIC);
        w.str(&serde_json::to_string(&self.spec).expect("spec serializes"));
        w.network(&self.network);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MODEL_MAGIC)?;
        let spec: ModelSpec =
            serde_json::from_str(&r.str()?).map_err(|e| FrameError::Malformed(format!("model spec: {e}")))?;
        let network = r.network()?;
        r.finish()?;
        Self::from_network(spec, network).map_err(|e| FrameError::Malformed(e.to_string()).into())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn cuts(&self) -> &[CutPoint] {
        &self.cuts
    }

    pub fn cut(&self, label: &str) -> Result<&CutPoint> {
        self.cuts.iter().find(|c| c.label == label).ok_or_else(|| {
            Error::Usage(format!(
                "unknown cut {label:?}; model {} has {:?}",
                self.spec.name,
                self.cuts.iter().map(|c| c.label.as_str()).collect::<Vec<_>>()
            ))
        })
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::shape(
                format!("{} input", self.spec.name),
                &self.spec.input_shape,
                image.shape(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image)?;
        self.network.forward(image)
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let logits = self.forward(image)?;
        let (class, confidence) = softmax_confidence(&logits)?;
        Ok(Prediction {
            logits,
            class,
            confidence,
        })
    }

    pub fn accuracy(&self, data: &ImageDataset) -> Result<f64> {
        let hits = par::try_map_range(data.len(), |i| {
            self.predict(&data.images[i]).map(|p| p.class == data.labels[i])
        })?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len().max(1) as f64)
    }
}

/// Device side of a partition.
#[derive(Debug, Clone)]
pub struct Head {
    network: Arc<Network>,
    input_shape: Vec<usize>,
    pub cut: CutPoint,
}

/// Edge side of a partition.
#[derive(Debug, Clone)]
pub struct Tail {
    network: Arc<Network>,
    pub cut: CutPoint,
}

impl Head {
    pub fn shares_parameters_with(&self, tail: &Tail) -> bool {
        Arc::ptr_eq(&self.network, &tail.network)
    }
}

pub fn partition(model: &Model, cut: &CutPoint) -> Result<(Head, Tail)> {
    if !model.cuts.contains(cut) {
        return Err(Error::Usage(format!(
            "cut {} (layer {}) is not a cut point of {}",
            cut.label, cut.layer_index, model.spec.name
        )));
    }
    Ok((
        Head {
            network: Arc::clone(&model.network),
            input_shape: model.spec.input_shape.clone(),
            cut: cut.clone(),
        },
        Tail {
            network: Arc::clone(&model.network),
            cut: cut.clone(),
        },
    ))
}

pub fn run_head(head: &Head, image: &Tensor) -> Result<FeatureVector> {
    if image.shape() != head.input_shape.as_slice() {
        return Err(Error::shape("head input", &head.input_shape, image.shape()));
    }
    let act = head.network.forward_range(0..head.cut.layer_index, image)?;
    Ok(FeatureVector::benign(act.into_data(), None))
}

/// Runs the remaining layers. Only `h.values` is read.
pub fn run_tail(tail: &Tail, h: &FeatureVector) -> Result<Prediction> {
    if h.dim() != tail.cut.feature_dim {
        return Err(Error::shape("tail input", &[tail.cut.feature_dim], &[h.dim()]));
    }
    let act = Tensor::new(tail.cut.shape.clone(), h.values.clone())?;
    let logits = tail.network.forward_range(tail.cut.layer_index..tail.network.len(), &act)?;
    let (class, confidence) = softmax_confidence(&logits)?;
    Ok(Prediction {
        logits,
        class,
        confidence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            learning_rate: 2e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

const GRAD_CHUNK: usize = 4;

/// Minibatch Adam on softmax cross-entropy.
pub fn train_classifier(
    model: &mut Model,
    train: &ImageDataset,
    test: Option<&ImageDataset>,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<ClassifierEpoch>> {
    if train.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut r = rng::stream(seed, 0xc1a55);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let net: &Network = &model.network;
            let parts = par::try_map_range(batch.len().div_ceil(GRAD_CHUNK), |c| {
                let (mut loss, mut correct, mut acc) = (0.0, 0usize, None::<Grads>);
                for &i in &batch[c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(batch.len())] {
                    let trace = net.forward_trace(&train.images[i])?;
                    let logits = trace.last().expect("non-empty");
                    let (l, g) = softmax_cross_entropy(logits, train.labels[i])?;
                    if softmax_confidence(logits)?.0 == train.labels[i] {
                        correct += 1;
                    }
                    loss += l;
                    let (_, grads) = net.backward(&trace, g)?;
                    match acc.as_mut() {
                        Some(a) => a.add_assign(&grads),
                        None => acc = Some(grads),
                    }
                }
                Ok::<_, Error>((loss, correct, acc.expect("non-empty chunk")))
            })
            .map_err(|e| match e {
                Error::Usage(m) => Error::Training(format!("classifier epoch {epoch}: {m}")),
                e => e,
            })?;
            let mut total: Option<Grads> = None;
            for (l, c, g) in &parts {
                loss_sum += l;
                hits += c;
                match total.as_mut() {
                    Some(t) => t.add_assign(g),
                    None => total = Some(g.clone()),
                }
            }
            let mut grads = total.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            let net = Arc::make_mut(&mut model.network);
            opt.step(&mut net.params_mut(), &grads.0)
                .map_err(|e| Error::Training(format!("classifier epoch {epoch}: {e}")))?;
        }
        let loss = loss_sum / train.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("classifier loss diverged at epoch {epoch}")));
        }
        let test_accuracy = test.map(|t| model.accuracy(t)).transpose()?;
        log::info!("classifier epoch {epoch}: loss {loss:.4}, test accuracy {test_accuracy:?}");
        log.push(ClassifierEpoch {
            epoch,
            loss,
            train_accuracy: hits as f64 / train.len() as f64,
            test_accuracy,
        });
    }
    Ok(log)
}
