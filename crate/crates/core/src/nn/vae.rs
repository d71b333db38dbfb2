//! Plain variational autoencoder over flat feature vectors, shared by the
//! attacker and the detector.
//!
//! Encoder: `d -> hidden -> relu -> 2L` (first half `mu`, second half
//! `log_sigma`, clamped). Decoder: `L -> hidden -> relu -> d` with a linear
//! output. Loss per sample is `||h - G(z)||^2 + lambda * KL`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    kl_diag_gaussian, kl_grads, reparameterize, Dense, GaussianHead, Grads, Layer, Network, Optimizer,
    Tensor, LOG_SIGMA_CLAMP,
};
use crate::error::{Error, Result};
use crate::{par, rng};

/// Samples per gradient chunk; chunks are summed in order.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// KL weight.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 64,
            lambda: 1.0,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("vae dimensions and batch size must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("kl weight must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

impl VaeLoss {
    fn accumulate(&mut self, other: &VaeLoss) {
        self.reconstruction += other.reconstruction;
        self.kl += other.kl;
        self.total += other.total;
    }

    fn scaled(mut self, k: f64) -> Self {
        self.reconstruction *= k;
        self.kl *= k;
        self.total *= k;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub reconstruction: f64,
    /// `None` when the KL weight is zero: the term is not part of the loss.
    pub kl: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub encoder: Network,
    pub decoder: Network,
    input_dim: usize,
    latent_dim: usize,
}

/// Encoder activations kept for backpropagation.
pub struct EncoderPass {
    pub trace: Vec<Tensor>,
    pub head: GaussianHead,
    /// `true` where `log_sigma` was inside the clamp range.
    pub unclamped: Vec<bool>,
}

impl Vae {
    pub fn new(input_dim: usize, hidden: usize, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let mut head = Dense::new(hidden, 2 * latent_dim, rng);
        // start with sigma close to 1 so early reparameterized draws stay tame
        let row = hidden;
        for w in &mut head.weight.data_mut()[latent_dim * row..] {
            *w *= 0.01;
        }
        let encoder = Network::new(vec![
            Layer::Dense(Dense::new(input_dim, hidden, rng)),
            Layer::Relu,
            Layer::Dense(head),
        ]);
        let decoder = Network::new(vec![
            Layer::Dense(Dense::new(latent_dim, hidden, rng)),
            Layer::Relu,
            Layer::Dense(Dense::new(hidden, input_dim, rng)),
        ]);
        Self {
            encoder,
            decoder,
            input_dim,
            latent_dim,
        }
    }

    /// Rebuilds from stored networks, checking that their shapes chain.
    pub fn from_networks(encoder: Network, decoder: Network) -> Result<Self> {
        let first = match encoder.layers().first() {
            Some(Layer::Dense(d)) => d.inputs(),
            _ => return Err(Error::Config("encoder must start with a dense layer".into())),
        };
        let enc_out = encoder.shapes(&[first])?.pop().expect("non-empty");
        if enc_out.len() != 1 || enc_out[0] % 2 != 0 {
            return Err(Error::Config(format!("encoder output {enc_out:?} is not a (mu, log_sigma) pair")));
        }
        let latent_dim = enc_out[0] / 2;
        let dec_out = decoder.shapes(&[latent_dim])?.pop().expect("non-empty");
        if dec_out != [first] {
            return Err(Error::shape("decoder output", &[first], &dec_out));
        }
        Ok(Self {
            encoder,
            decoder,
            input_dim: first,
            latent_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.input_dim {
            return Err(Error::shape("vae input", &[self.input_dim], &[h.len()]));
        }
        Ok(())
    }

    pub fn encode_pass(&self, h: &[f64]) -> Result<EncoderPass> {
        self.check_input(h)?;
        let trace = self.encoder.forward_trace(&Tensor::from_vec(h.to_vec()))?;
        let out = trace.last().expect("non-empty").data();
        let l = self.latent_dim;
        let mu = Tensor::from_vec(out[..l].to_vec());
        let raw = &out[l..];
        let unclamped = raw.iter().map(|v| v.abs() <= LOG_SIGMA_CLAMP).collect();
        let log_sigma = Tensor::from_vec(raw.iter().map(|v| v.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)).collect());
        Ok(EncoderPass {
            trace,
            head: GaussianHead::new(mu, log_sigma)?,
            unclamped,
        })
    }

    pub fn encode(&self, h: &[f64]) -> Result<GaussianHead> {
        Ok(self.encode_pass(h)?.head)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape() != [self.latent_dim] {
            return Err(Error::shape("vae latent", &[self.latent_dim], z.shape()));
        }
        self.decoder.forward(z)
    }

    /// Deterministic reconstruction `G(mu(h))`.
    pub fn reconstruct(&self, h: &[f64]) -> Result<Tensor> {
        self.decode(&self.encode(h)?.mu)
    }

    /// Backpropagates gradients on `(mu, log_sigma)` into encoder parameters.
    pub fn encoder_backward(&self, pass: &EncoderPass, dmu: &[f64], dlog_sigma: &[f64]) -> Result<(Tensor, Grads)> {
        let mut upstream = Vec::with_capacity(2 * self.latent_dim);
        upstream.extend_from_slice(dmu);
        upstream.extend(dlog_sigma.iter().zip(&pass.unclamped).map(|(&g, &free)| if free { g } else { 0.0 }));
        self.encoder.backward(&pass.trace, Tensor::from_vec(upstream))
    }

    pub fn loss(&self, h: &[f64], eps: &Tensor, lambda: f64) -> Result<VaeLoss> {
        let head = self.encode(h)?;
        let z = reparameterize(&head, eps)?;
        let recon = self.decode(&z)?;
        let rec: f64 = recon.data().iter().zip(h).map(|(r, x)| (r - x) * (r - x)).sum();
        let kl = if lambda > 0.0 { kl_diag_gaussian(&head) } else { 0.0 };
        Ok(VaeLoss {
            reconstruction: rec,
            kl,
            total: rec + lambda * kl,
        })
    }

    /// Loss and gradients, encoder parameters first then decoder.
    pub fn loss_and_grads(&self, h: &[f64], eps: &Tensor, lambda: f64) -> Result<(VaeLoss, Grads)> {
        let pass = self.encode_pass(h)?;
        let z = reparameterize(&pass.head, eps)?;
        let dec_trace = self.decoder.forward_trace(&z)?;
        let recon = dec_trace.last().expect("non-empty");
        let diff: Vec<f64> = recon.data().iter().zip(h).map(|(r, x)| r - x).collect();
        let rec: f64 = diff.iter().map(|d| d * d).sum();
        let upstream = Tensor::from_vec(diff.iter().map(|d| 2.0 * d).collect());
        let (dz, dec_grads) = self.decoder.backward(&dec_trace, upstream)?;

        // z = mu + exp(ls) * eps
        let sigma = pass.head.sigma();
        let mut dmu = dz.data().to_vec();
        let mut dls: Vec<f64> = dz
            .data()
            .iter()
            .zip(sigma.data())
            .zip(eps.data())
            .map(|((g, s), e)| g * s * e)
            .collect();
        let kl = if lambda > 0.0 {
            let (kmu, kls) = kl_grads(&pass.head);
            for (a, b) in dmu.iter_mut().zip(kmu) {
                *a += lambda * b;
            }
            for (a, b) in dls.iter_mut().zip(kls) {
                *a += lambda * b;
            }
            kl_diag_gaussian(&pass.head)
        } else {
            0.0
        };
        let (_, enc_grads) = self.encoder_backward(&pass, &dmu, &dls)?;
        let mut grads = enc_grads.0;
        grads.extend(dec_grads.0);
        Ok((
            VaeLoss {
                reconstruction: rec,
                kl,
                total: rec + lambda * kl,
            },
            Grads(grads),
        ))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    /// Standard-normal noise for sample `index` of `epoch`; each draw has
    /// its own stream so batches can be evaluated in any order.
    pub fn epoch_noise(&self, seed: u64, epoch: usize, index: usize) -> Tensor {
        let mut r = rng::stream(rng::derive(seed, epoch as u64), index as u64);
        Tensor::from_vec((0..self.latent_dim).map(|_| r.sample(StandardNormal)).collect())
    }

    /// Minibatch Adam training. Returns the mean per-sample loss of every
    /// epoch.
    pub fn fit(&mut self, data: &[Vec<f64>], cfg: &VaeConfig, seed: u64) -> Result<Vec<EpochLoss>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Usage("cannot train on an empty dataset".into()));
        }
        for h in data {
            self.check_input(h)?;
        }
        let mut opt = Optimizer::adam(cfg.learning_rate)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = rng::stream(seed, 0x5eed);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
            let mut sum = VaeLoss::default();
            for batch in order.chunks(cfg.batch_size) {
                let this = &*self;
                let parts = par::try_map_range(batch.len().div_ceil(GRAD_CHUNK), |c| {
                    let mut loss = VaeLoss::default();
                    let mut acc: Option<Grads> = None;
                    for &i in &batch[c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(batch.len())] {
                        let eps = this.epoch_noise(seed, epoch, i);
                        let (l, g) = this.loss_and_grads(&data[i], &eps, cfg.lambda)?;
                        loss.accumulate(&l);
                        match acc.as_mut() {
                            Some(a) => a.add_assign(&g),
                            None => acc = Some(g),
                        }
                    }
                    Ok::<_, Error>((loss, acc.expect("non-empty chunk")))
                })?;
                let mut grads: Option<Grads> = None;
                for (l, g) in &parts {
                    sum.accumulate(l);
                    match grads.as_mut() {
                        Some(a) => a.add_assign(g),
                        None => grads = Some(g.clone()),
                    }
                }
                let mut grads = grads.expect("non-empty batch");
                grads.scale(1.0 / batch.len() as f64);
                opt.step(&mut self.params_mut(), &grads.0).map_err(|e| match e {
                    Error::Training(msg) => Error::Training(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            }
            let mean = sum.scaled(1.0 / data.len() as f64);
            if !mean.total.is_finite() {
                return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
            }
            log::debug!("vae epoch {epoch}: total {:.6}", mean.total);
            history.push(EpochLoss {
                epoch,
                reconstruction: mean.reconstruction,
                kl: (cfg.lambda > 0.0).then_some(mean.kl),
                total: mean.total,
            });
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let a: f64 = r.random_range(-1.0..1.0);
                let b: f64 = r.random_range(-1.0..1.0);
                (0..d).map(|j| a * (j as f64 * 0.3).sin() + b * (j as f64 * 0.7).cos()).collect()
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_decreasing() {
        let data = toy_data(600, 12, 1);
        let cfg = VaeConfig {
            latent_dim: 2,
            hidden: 16,
            epochs: 6,
            ..VaeConfig::default()
        };
        let mut a = Vae::new(12, 16, 2, &mut rng::seeded(3));
        let mut b = a.clone();
        let ha = a.fit(&data, &cfg, 9).unwrap();
        let hb = b.fit(&data, &cfg, 9).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        for w in ha.windows(2).take(5) {
            assert!(w[1].total < w[0].total, "{ha:?}");
        }
    }

    #[test]
    fn zero_lambda_drops_kl_from_trace() {
        let data = toy_data(60, 6, 2);
        let cfg = VaeConfig {
            latent_dim: 2,
            hidden: 8,
            lambda: 0.0,
            epochs: 2,
            ..VaeConfig::default()
        };
        let mut v = Vae::new(6, 8, 2, &mut rng::seeded(1));
        let h = v.fit(&data, &cfg, 0).unwrap();
        assert!(h.iter().all(|e| e.kl.is_none() && e.total == e.reconstruction));
    }

    #[test]
    fn rejects_wrong_dimension() {
        let v = Vae::new(4, 8, 2, &mut rng::seeded(1));
        assert!(v.encode(&[0.0; 3]).is_err());
        assert!(v.decode(&Tensor::zeros(&[3])).is_err());
        let rebuilt = Vae::from_networks(v.encoder.clone(), v.decoder.clone()).unwrap();
        assert_eq!(rebuilt, v);
    }
}
