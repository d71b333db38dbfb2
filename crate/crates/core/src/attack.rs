//! Black-box latent interpolation attack on intermediate features.
//!
//! The adversary only sees transmitted feature vectors. It fits a VAE to a
//! passively collected set, then for each intercepted feature `h_o` decodes
//! `z_nu = (1 - nu) * z_o + nu * z_t`, where `z_o` is the encoder mean of
//! `h_o` and `z_t` is drawn from a Gaussian fitted to the encoded training
//! set. Nothing here reads classifier parameters, labels, or detector state;
//! scoring the outcome is [`evaluate_attack`]'s job and happens on the edge
//! side.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FrameError, Result};
use crate::nn::checkpoint::{self, Reader, Writer};
use crate::nn::vae::{EpochLoss, Vae, VaeConfig};
use crate::nn::Tensor;
use crate::split::{run_tail, CutPoint, FeatureDataset, FeatureVector, Provenance, Split, Tail};
use crate::{par, rng};

pub const ATTACK_MAGIC: &[u8; 4] = b"SSAV";

/// Minimum collected samples per latent dimension.
pub const MIN_SAMPLES_PER_LATENT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Attack strength in `[0, 1]`.
    pub nu: f64,
    pub cut: String,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        check_nu(self.nu)
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Config(format!("attack strength nu must lie in [0, 1], got {nu}")));
    }
    Ok(())
}

/// Accumulates the first `n` observed features into an unlabeled set.
pub fn collect_features<I>(stream: I, n: usize, cut: &CutPoint) -> Result<FeatureDataset>
where
    I: IntoIterator<Item = FeatureVector>,
{
    let mut samples = Vec::with_capacity(n);
    for mut h in stream.into_iter().take(n) {
        if h.dim() != cut.feature_dim {
            return Err(Error::Usage(format!(
                "observed feature of length {} in a stream at cut {} (d = {})",
                h.dim(),
                cut.label,
                cut.feature_dim
            )));
        }
        h.source_label = None;
        samples.push(h);
    }
    if samples.len() < n {
        return Err(Error::Usage(format!("stream ended after {} of {n} features", samples.len())));
    }
    FeatureDataset::new(cut.clone(), Split::Train, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackVae {
    vae: Vae,
    latent_mean: Vec<f64>,
    latent_var: Vec<f64>,
}

pub fn train_attack_vae(d_h: &FeatureDataset, cfg: &VaeConfig, seed: u64) -> Result<(AttackVae, Vec<EpochLoss>)> {
    cfg.validate()?;
    let floor = MIN_SAMPLES_PER_LATENT * cfg.latent_dim;
    if d_h.len() < floor {
        return Err(Error::Usage(format!(
            "attack vae needs at least {floor} collected features for latent dim {}, got {}",
            cfg.latent_dim,
            d_h.len()
        )));
    }
    if d_h.samples.iter().any(|s| s.source_label.is_some()) {
        return Err(Error::Usage("collected features must not carry labels".into()));
    }
    let data = d_h.values();
    let mut vae = Vae::new(d_h.cut.feature_dim, cfg.hidden, cfg.latent_dim, &mut rng::stream(seed, 1));
    let history = vae.fit(&data, cfg, rng::derive(seed, 2))?;
    let mus = par::try_map(&data, |h| vae.encode(h).map(|g| g.mu.into_data()))?;
    let (latent_mean, latent_var) = moments(&mus, cfg.latent_dim);
    Ok((
        AttackVae {
            vae,
            latent_mean,
            latent_var,
        },
        history,
    ))
}

fn moments(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, var)
}

/// `(1 - nu) * z_o + nu * z_t`
pub fn interpolate(z_o: &[f64], z_t: &[f64], nu: f64) -> Vec<f64> {
    z_o.iter().zip(z_t).map(|(a, b)| (1.0 - nu) * a + nu * b).collect()
}

impl AttackVae {
    /// Builds an attack model from parts, e.g. after loading or in tests.
    pub fn from_parts(vae: Vae, latent_mean: Vec<f64>, latent_var: Vec<f64>) -> Result<Self> {
        let l = vae.latent_dim();
        if latent_mean.len() != l || latent_var.len() != l {
            return Err(Error::shape("attack latent statistics", &[l], &[latent_mean.len()]));
        }
        if latent_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("latent variance must be non-negative".into()));
        }
        Ok(Self {
            vae,
            latent_mean,
            latent_var,
        })
    }

    pub fn vae(&self) -> &Vae {
        &self.vae
    }

    pub fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    pub fn latent_mean(&self) -> &[f64] {
        &self.latent_mean
    }

    pub fn latent_var(&self) -> &[f64] {
        &self.latent_var
    }

    /// Target latent from the fitted diagonal Gaussian.
    pub fn sample_target_latent(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.latent_mean
            .iter()
            .zip(&self.latent_var)
            .map(|(m, v)| {
                let e: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * e
            })
            .collect()
    }

    /// Encoder mean of `h`.
    pub fn encode_mean(&self, h: &FeatureVector) -> Result<Vec<f64>> {
        Ok(self.vae.encode(&h.values)?.mu.into_data())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.vae.decode(&Tensor::from_vec(z.to_vec()))?.into_data())
    }

    /// Decodes the interpolated latent. The output keeps `h_o`'s source
    /// label only so the edge can score the attack afterwards.
    pub fn craft_adversarial(&self, h_o: &FeatureVector, z_t: &[f64], nu: f64) -> Result<FeatureVector> {
        check_nu(nu)?;
        if z_t.len() != self.latent_dim() {
            return Err(Error::shape("target latent", &[self.latent_dim()], &[z_t.len()]));
        }
        let z_o = self.encode_mean(h_o)?;
        let values = self.decode(&interpolate(&z_o, z_t, nu))?;
        Ok(FeatureVector {
            values,
            source_label: h_o.source_label,
            provenance: Provenance::Adversarial,
            noisy: false,
        })
    }

    /// Crafts one adversarial feature per source with a fresh target latent
    /// each; sample `i` draws from stream `i` of `seed`.
    pub fn craft_batch(&self, sources: &[FeatureVector], nu: f64, seed: u64) -> Result<Vec<FeatureVector>> {
        check_nu(nu)?;
        par::try_map_range(sources.len(), |i| {
            let z_t = self.sample_target_latent(&mut rng::stream(seed, i as u64));
            self.craft_adversarial(&sources[i], &z_t, nu)
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(ATTACK_MAGIC);
        w.network(&self.vae.encoder);
        w.network(&self.vae.decoder);
        w.f64s(&self.latent_mean);
        w.f64s(&self.latent_var);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, ATTACK_MAGIC)?;
        let enc = r.network()?;
        let dec = r.network()?;
        let mean = r.f64s()?;
        let var = r.f64s()?;
        r.finish()?;
        let vae = Vae::from_networks(enc, dec).map_err(|e| FrameError::Malformed(e.to_string()))?;
        Self::from_parts(vae, mean, var)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub nu: f64,
    pub asr: f64,
    pub mean_confidence: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub cut: String,
    pub rows: Vec<AttackRow>,
}

/// Attack success (prediction differs from the source's ground truth) and
/// mean softmax confidence for one strength.
pub fn score_attack(tail: &Tail, nu: f64, adversarial: &[FeatureVector]) -> Result<AttackRow> {
    if adversarial.is_empty() {
        return Err(Error::Usage("no adversarial features to evaluate".into()));
    }
    let preds = par::try_map(adversarial, |h| {
        let label = h
            .source_label
            .ok_or_else(|| Error::Usage("adversarial feature without a source label".into()))?;
        run_tail(tail, h).map(|p| (p.class != label, p.confidence))
    })?;
    let n = preds.len() as f64;
    Ok(AttackRow {
        nu,
        asr: preds.iter().filter(|p| p.0).count() as f64 / n,
        mean_confidence: preds.iter().map(|p| p.1).sum::<f64>() / n,
        evaluated: preds.len(),
    })
}

/// One row per `(nu, features)` cell, sorted by `nu`.
pub fn evaluate_attack(tail: &Tail, cells: &[(f64, Vec<FeatureVector>)]) -> Result<AttackReport> {
    let mut rows = cells
        .iter()
        .map(|(nu, feats)| score_attack(tail, *nu, feats))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.nu.total_cmp(&b.nu));
    Ok(AttackReport {
        cut: tail.cut.label.clone(),
        rows,
    })
}
