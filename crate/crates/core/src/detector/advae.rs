//! VAE with a learned Gaussian transformer `T` over the latent head.
//!
//! Training runs in two stages. Encoder `E` and generator `G` are fitted as
//! a plain VAE on benign features. Then, with `E` and `G` frozen, the affine
//! map `T: (mu, log_sigma) -> (mu_T, log_sigma_T)` is fitted to the hinge
//!
//! `max(0, m - ||G(mu) - G(mu_T)||^2 / d) + beta * ||T(x) - x||^2`
//!
//! so that `T` finds the smallest latent move that shifts the reconstruction
//! by a margin `m` (a multiple of the mean benign per-coordinate
//! reconstruction error).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::vae::{EpochLoss, Vae, VaeConfig};
use crate::nn::{Dense, Grads, Layer, Network, Optimizer, Tensor};
use crate::split::{FeatureDataset, Provenance};
use crate::{par, rng};

const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdVaeConfig {
    pub vae: VaeConfig,
    pub transformer_epochs: usize,
    pub transformer_learning_rate: f64,
    /// Margin as a multiple of the mean per-coordinate reconstruction error.
    pub margin_scale: f64,
    /// Weight of the `||T(x) - x||^2` penalty.
    pub transformer_penalty: f64,
}

impl Default for AdVaeConfig {
    fn default() -> Self {
        Self {
            vae: VaeConfig::default(),
            transformer_epochs: 5,
            transformer_learning_rate: 1e-3,
            margin_scale: 1.0,
            transformer_penalty: 0.1,
        }
    }
}

impl AdVaeConfig {
    pub fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        if !(self.transformer_learning_rate > 0.0) {
            return Err(Error::Config("transformer learning rate must be positive".into()));
        }
        if !(self.margin_scale >= 0.0 && self.margin_scale.is_finite()) {
            return Err(Error::Config("margin scale must be finite and >= 0".into()));
        }
        if !(self.transformer_penalty >= 0.0 && self.transformer_penalty.is_finite()) {
            return Err(Error::Config("transformer penalty must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdVaeHistory {
    pub vae: Vec<EpochLoss>,
    /// Mean transformer objective per epoch.
    pub transformer: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdVae {
    pub vae: Vae,
    /// Single dense layer `2L -> 2L`.
    pub transformer: Network,
}

/// Near-identity affine map on `2 * latent_dim` inputs.
pub fn identity_transformer(latent_dim: usize, jitter: f64, rng: &mut impl Rng) -> Network {
    let n = 2 * latent_dim;
    let normal = Normal::new(0.0, jitter.max(0.0)).expect("valid std");
    let mut w = vec![0.0; n * n];
    for (k, v) in w.iter_mut().enumerate() {
        *v = if k / n == k % n { 1.0 } else { 0.0 } + if jitter > 0.0 { normal.sample(rng) } else { 0.0 };
    }
    let weight = Tensor::new(vec![n, n], w).expect("square");
    Network::new(vec![Layer::Dense(
        Dense::from_parts(weight, Tensor::zeros(&[n])).expect("consistent"),
    )])
}

impl AdVae {
    pub fn from_parts(vae: Vae, transformer: Network) -> Result<Self> {
        let n = 2 * vae.latent_dim();
        let out = transformer.shapes(&[n])?.pop().expect("non-empty");
        if out != [n] {
            return Err(Error::shape("transformer output", &[n], &out));
        }
        Ok(Self { vae, transformer })
    }

    pub fn input_dim(&self) -> usize {
        self.vae.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    /// Encoder mean, transformed mean and reconstruction `G(mu)`.
    pub fn analyze(&self, h: &[f64]) -> Result<Analysis> {
        let head = self.vae.encode(h)?;
        let l = self.latent_dim();
        let mut x = head.mu.data().to_vec();
        x.extend_from_slice(head.log_sigma.data());
        let t = self.transformer.forward(&Tensor::from_vec(x))?;
        let recon = self.vae.decode(&head.mu)?.into_data();
        Ok(Analysis {
            mu: head.mu.into_data(),
            mu_t: t.data()[..l].to_vec(),
            recon,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.vae.params();
        p.extend(self.transformer.params());
        p
    }
}

pub struct Analysis {
    pub mu: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub recon: Vec<f64>,
}

/// Errors if any training sample is adversarial.
pub fn check_benign(data: &FeatureDataset) -> Result<()> {
    if let Some(i) = data.samples.iter().position(|s| s.provenance == Provenance::Adversarial) {
        return Err(Error::Usage(format!(
            "detector training set contains an adversarial sample at index {i}"
        )));
    }
    Ok(())
}

pub fn train_advae(benign: &FeatureDataset, cfg: &AdVaeConfig, seed: u64) -> Result<(AdVae, AdVaeHistory)> {
    cfg.validate()?;
    check_benign(benign)?;
    let floor = 10 * cfg.vae.latent_dim;
    if benign.len() < floor {
        return Err(Error::Usage(format!(
            "adVAE needs at least {floor} benign features for latent dim {}, got {}",
            cfg.vae.latent_dim,
            benign.len()
        )));
    }
    let data = benign.values();
    let d = benign.cut.feature_dim;
    let mut vae = Vae::new(d, cfg.vae.hidden, cfg.vae.latent_dim, &mut rng::stream(seed, 1));
    let vae_hist = vae.fit(&data, &cfg.vae, rng::derive(seed, 2))?;

    // frozen encoder outputs and generator reconstructions
    let cached = par::try_map(&data, |h| {
        let head = vae.encode(h)?;
        let recon = vae.decode(&head.mu)?.into_data();
        let re: f64 = recon.iter().zip(h).map(|(r, x)| (r - x) * (r - x)).sum();
        let mut x = head.mu.into_data();
        x.extend_from_slice(head.log_sigma.data());
        Ok::<_, Error>((x, recon, re))
    })?;
    let margin = cfg.margin_scale * cached.iter().map(|c| c.2).sum::<f64>() / (data.len() * d) as f64;
    let l = cfg.vae.latent_dim;
    let mut transformer = identity_transformer(l, 0.05, &mut rng::stream(seed, 3));
    let mut opt = Optimizer::adam(cfg.transformer_learning_rate)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(seed, 4);
    let mut t_hist = Vec::with_capacity(cfg.transformer_epochs);
    for epoch in 0..cfg.transformer_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.vae.batch_size) {
            let t = &transformer;
            let parts = par::try_map_range(batch.len().div_ceil(GRAD_CHUNK), |c| {
                let mut loss = 0.0;
                let mut acc: Option<Grads> = None;
                for &i in &batch[c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(batch.len())] {
                    let (x, recon, _) = &cached[i];
                    let (li, g) = transformer_loss_and_grads(&vae, t, x, recon, margin, cfg.transformer_penalty)?;
                    loss += li;
                    match acc.as_mut() {
                        Some(a) => a.add_assign(&g),
                        None => acc = Some(g),
                    }
                }
                Ok::<_, Error>((loss, acc.expect("non-empty chunk")))
            })?;
            let mut grads: Option<Grads> = None;
            for (li, g) in &parts {
                total += li;
                match grads.as_mut() {
                    Some(a) => a.add_assign(g),
                    None => grads = Some(g.clone()),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut transformer.params_mut(), &grads.0).map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("transformer epoch {epoch}: {msg}")),
                other => other,
            })?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("transformer loss diverged at epoch {epoch}")));
        }
        log::debug!("transformer epoch {epoch}: {mean:.6}");
        t_hist.push(mean);
    }
    Ok((
        AdVae { vae, transformer },
        AdVaeHistory {
            vae: vae_hist,
            transformer: t_hist,
            margin,
        },
    ))
}

/// Transformer objective for one encoded sample `x = [mu, log_sigma]` with
/// cached reconstruction `G(mu)`; gradients cover `T` only.
pub fn transformer_loss_and_grads(
    vae: &Vae,
    transformer: &Network,
    x: &[f64],
    recon: &[f64],
    margin: f64,
    penalty: f64,
) -> Result<(f64, Grads)> {
    let l = vae.latent_dim();
    let d = recon.len() as f64;
    let trace = transformer.forward_trace(&Tensor::from_vec(x.to_vec()))?;
    let y = trace.last().expect("non-empty").data().to_vec();
    let dec = vae.decoder.forward_trace(&Tensor::from_vec(y[..l].to_vec()))?;
    let diff: Vec<f64> = dec.last().expect("non-empty").data().iter().zip(recon).map(|(a, b)| a - b).collect();
    let dist = diff.iter().map(|v| v * v).sum::<f64>() / d;
    let shift: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    let hinge = (margin - dist).max(0.0);
    let mut dy: Vec<f64> = y.iter().zip(x).map(|(a, b)| 2.0 * penalty * (a - b)).collect();
    if hinge > 0.0 {
        let up = Tensor::from_vec(diff.iter().map(|v| -2.0 * v / d).collect());
        let (dmu, _) = vae.decoder.backward(&dec, up)?;
        for (a, b) in dy.iter_mut().zip(dmu.data()) {
            *a += b;
        }
    }
    let (_, grads) = transformer.backward(&trace, Tensor::from_vec(dy))?;
    Ok((hinge + penalty * shift, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::{CutPoint, FeatureVector, Split};

    pub(crate) fn toy_set(n: usize, d: usize, seed: u64) -> FeatureDataset {
        let mut r = rng::seeded(seed);
        let samples = (0..n)
            .map(|_| {
                let a: f64 = r.random_range(0.0..1.0);
                let b: f64 = r.random_range(0.0..1.0);
                let v = (0..d).map(|j| a * (j as f64 * 0.4).sin() + b * (j as f64 * 0.9).cos()).collect();
                FeatureVector::benign(v, None)
            })
            .collect();
        let cut = CutPoint {
            label: "toy".into(),
            layer_index: 1,
            feature_dim: d,
            shape: vec![d],
        };
        FeatureDataset::new(cut, Split::Train, samples).unwrap()
    }

    fn small_cfg() -> AdVaeConfig {
        AdVaeConfig {
            vae: VaeConfig {
                latent_dim: 2,
                hidden: 16,
                epochs: 6,
                ..VaeConfig::default()
            },
            transformer_epochs: 3,
            ..AdVaeConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_guarded() {
        let set = toy_set(300, 10, 1);
        let (a, ha) = train_advae(&set, &small_cfg(), 4).unwrap();
        let (b, hb) = train_advae(&set, &small_cfg(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        for w in ha.vae.windows(2).take(5) {
            assert!(w[1].total < w[0].total);
        }
        assert_eq!(ha.transformer.len(), 3);
        assert!(ha.margin > 0.0);

        let mut bad = set.clone();
        bad.samples[7].provenance = Provenance::Adversarial;
        assert!(matches!(train_advae(&bad, &small_cfg(), 4), Err(Error::Usage(_))));
        let tiny = toy_set(5, 10, 1);
        assert!(train_advae(&tiny, &small_cfg(), 4).is_err());
    }

    #[test]
    fn zero_lambda_has_no_kl_trace() {
        let mut cfg = small_cfg();
        cfg.vae.lambda = 0.0;
        cfg.vae.epochs = 2;
        let (_, h) = train_advae(&toy_set(100, 6, 2), &cfg, 1).unwrap();
        assert!(h.vae.iter().all(|e| e.kl.is_none()));
    }

    #[test]
    fn identity_transformer_reproduces_input() {
        let t = identity_transformer(3, 0.0, &mut rng::seeded(0));
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        assert_eq!(t.forward(&x).unwrap(), x);
    }

    #[test]
    fn transformer_reaches_margin() {
        let set = toy_set(300, 10, 5);
        let mut cfg = small_cfg();
        cfg.transformer_epochs = 15;
        cfg.transformer_learning_rate = 5e-3;
        let (ad, hist) = train_advae(&set, &cfg, 3).unwrap();
        assert!(hist.transformer.last().unwrap() < hist.transformer.first().unwrap(), "{hist:?}");
        let a = ad.analyze(&set.samples[0].values).unwrap();
        assert!(a.mu.iter().zip(&a.mu_t).any(|(x, y)| x != y));
    }
}
