use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
        )
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite
    /// or mis-shaped.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("gradient of parameter {i}"), p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::Training(format!("non-finite gradient for parameter {i}")));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, dw) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * dw;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
                    self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                    self.v = self.m.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    let (pd, gd) = (p.data_mut(), g.data());
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    for j in 0..pd.len() {
                        md[j] = beta1 * md[j] + (1.0 - beta1) * gd[j];
                        vd[j] = beta2 * vd[j] + (1.0 - beta2) * gd[j] * gd[j];
                        let mhat = md[j] / c1;
                        let vhat = vd[j] / c2;
                        pd[j] -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
