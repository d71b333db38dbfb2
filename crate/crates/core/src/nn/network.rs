use std::ops::Range;

use super::{Layer, Tensor};
use crate::error::{Error, Result};

/// Ordered stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Parameter gradients, flat and aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Grads(params.iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.0 {
            g.scale(k);
        }
    }

    /// Sums in slice order; callers rely on the fixed order for determinism.
    pub fn sum(parts: &[Grads]) -> Option<Grads> {
        let (first, rest) = parts.split_first()?;
        let mut acc = first.clone();
        for g in rest {
            acc.add_assign(g);
        }
        Some(acc)
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Validates that the stack maps `input` to some shape and returns every
    /// intermediate shape, starting with `input`.
    pub fn shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(shapes.last().expect("non-empty")).map_err(|e| match e {
                Error::Shape { layer, expected, actual } => Error::Shape {
                    layer: format!("layer {i} ({layer})"),
                    expected,
                    actual,
                },
                other => other,
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_range(0..self.layers.len(), input)
    }

    /// Runs `layers[range]` only.
    pub fn forward_range(&self, range: Range<usize>, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers[range] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Forward pass keeping every activation; `trace[0]` is the input and
    /// `trace[len]` the output.
    pub fn forward_trace(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn backward(&self, trace: &[Tensor], upstream: Tensor) -> Result<(Tensor, Grads)> {
        if trace.len() != self.layers.len() + 1 {
            return Err(Error::Usage(format!(
                "trace has {} activations, network needs {}",
                trace.len(),
                self.layers.len() + 1
            )));
        }
        let mut grad = upstream;
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, pg) = layer.backward(&trace[i], &grad)?;
            per_layer.push(pg);
            grad = dx;
        }
        per_layer.reverse();
        Ok((grad, Grads(per_layer.into_iter().flatten().collect())))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
