//! Additive symmetric alpha-stable (SaS) channel with sparse bursts.
//!
//! The noise variable has characteristic function
//! `exp(i*delta*u - kappa*|u|^alpha * (1 + i*eta*sgn(u)*omega(u, alpha)))`.
//! Only the symmetric, centred case (`eta = 0`, `delta = 0`) is generated,
//! which leaves `exp(-kappa*|u|^alpha)`; `eta` and `delta` are carried so a
//! spec can describe the general family, and are rejected when non-zero.
//!
//! A transmitted batch is corrupted in two stages: a fraction `f_n` of
//! samples is selected, then every coordinate of a selected sample
//! independently receives an additive draw with probability `p_b`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::split::{FeatureDataset, FeatureVector};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Impulsiveness, `0 < alpha <= 2` (2 is Gaussian).
    pub alpha: f64,
    /// Scale, `kappa > 0`; draws scale as `kappa^(1/alpha)`.
    pub kappa: f64,
    /// Skewness. Must be 0.
    #[serde(default)]
    pub eta: f64,
    /// Location. Must be 0.
    #[serde(default)]
    pub delta: f64,
    /// Per-coordinate corruption probability.
    pub p_b: f64,
    /// Fraction of samples routed through the noisy channel.
    pub f_n: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 2], got {}", self.alpha)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.eta != 0.0 || self.delta != 0.0 {
            return Err(Error::Config(
                "only symmetric zero-location noise is supported (eta = delta = 0)".into(),
            ));
        }
        for (name, v) in [("p_b", self.p_b), ("f_n", self.f_n)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// True when the channel never alters a sample.
    pub fn is_bypass(&self) -> bool {
        self.p_b == 0.0 || self.f_n == 0.0
    }

    /// Characteristic function of a single draw, `exp(-kappa*|u|^alpha)`.
    pub fn characteristic(&self, u: f64) -> f64 {
        (-self.kappa * u.abs().powf(self.alpha)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    None,
    Light,
    Moderate,
    Severe,
    Extreme,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 5] = [
        NoiseLevel::None,
        NoiseLevel::Light,
        NoiseLevel::Moderate,
        NoiseLevel::Severe,
        NoiseLevel::Extreme,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseLevel::None => "none",
            NoiseLevel::Light => "light",
            NoiseLevel::Moderate => "moderate",
            NoiseLevel::Severe => "severe",
            NoiseLevel::Extreme => "extreme",
        }
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise preset {s:?} (none|light|moderate|severe|extreme)")))
    }
}

/// Named channel settings. `None` keeps a valid distribution but never
/// selects a sample.
pub fn preset(level: NoiseLevel) -> NoiseSpec {
    let (alpha, kappa, p_b, f_n) = match level {
        NoiseLevel::None => (2.0, 1.0, 0.0, 0.0),
        NoiseLevel::Light => (1.8, 0.01, 0.005, 0.15),
        NoiseLevel::Moderate => (1.6, 0.02, 0.010, 0.30),
        NoiseLevel::Severe => (1.4, 0.08, 0.10, 0.30),
        NoiseLevel::Extreme => (1.2, 0.12, 0.15, 0.50),
    };
    NoiseSpec {
        alpha,
        kappa,
        eta: 0.0,
        delta: 0.0,
        p_b,
        f_n,
    }
}

pub fn preset_by_name(name: &str) -> Result<NoiseSpec> {
    Ok(preset(name.parse()?))
}

/// One SaS draw via the Chambers-Mallows-Stuck construction.
pub fn sample_sas(spec: &NoiseSpec, rng: &mut impl Rng) -> Result<f64> {
    if !(spec.alpha > 0.0 && spec.alpha <= 2.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 2], got {}", spec.alpha)));
    }
    Ok(draw(spec.alpha, spec.kappa, rng))
}

fn draw(alpha: f64, kappa: f64, rng: &mut impl Rng) -> f64 {
    // V uniform on the open interval (-pi/2, pi/2)
    let v = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break PI * (u - 0.5);
        }
    };
    if alpha == 1.0 {
        return kappa * v.tan();
    }
    let w: f64 = rng.sample(Exp1);
    let scale = kappa.powf(1.0 / alpha);
    let a = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
    debug_assert!(v.abs() < FRAC_PI_2);
    scale * a * b
}

/// Adds bursts in place and returns how many coordinates were hit.
pub fn corrupt_values(values: &mut [f64], spec: &NoiseSpec, rng: &mut impl Rng) -> usize {
    let mut hits = 0;
    for v in values.iter_mut() {
        if spec.p_b > 0.0 && rng.random::<f64>() < spec.p_b {
            *v += draw(spec.alpha, spec.kappa, rng);
            hits += 1;
        }
    }
    hits
}

/// Passes one sample through the noisy channel. Provenance and label are
/// kept; the sample is flagged noisy even if no coordinate was hit.
pub fn corrupt_sample(h: &FeatureVector, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<FeatureVector> {
    spec.validate()?;
    let mut out = h.clone();
    corrupt_values(&mut out.values, spec, rng);
    out.noisy = true;
    Ok(out)
}

/// Routes exactly `round(f_n * N)` uniformly chosen samples through
/// [`corrupt_sample`]; the rest pass unchanged with `noisy = false`.
///
/// Each selected sample uses its own stream derived from one draw of `rng`,
/// so the result does not depend on evaluation order.
pub fn corrupt_features(samples: &[FeatureVector], spec: &NoiseSpec, rng: &mut impl Rng) -> Result<Vec<FeatureVector>> {
    spec.validate()?;
    let n = samples.len();
    let k = ((spec.f_n * n as f64).round() as usize).min(n);
    let mut chosen = vec![false; n];
    for i in index::sample(rng, n, k) {
        chosen[i] = true;
    }
    let base: u64 = rng.random();
    let out = par::map_range(n, |i| {
        let mut s = samples[i].clone();
        if chosen[i] {
            corrupt_values(&mut s.values, spec, &mut rng::stream(base, i as u64));
            s.noisy = true;
        } else {
            s.noisy = false;
        }
        s
    });
    Ok(out)
}

pub fn corrupt_batch(batch: &FeatureDataset, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<FeatureDataset> {
    let samples = corrupt_features(&batch.samples, spec, rng)?;
    FeatureDataset::new(batch.cut.clone(), batch.split, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::{CutPoint, Provenance, Split};

    fn spec(alpha: f64, kappa: f64, p_b: f64, f_n: f64) -> NoiseSpec {
        NoiseSpec {
            alpha,
            kappa,
            eta: 0.0,
            delta: 0.0,
            p_b,
            f_n,
        }
    }

    #[test]
    fn presets_match_table_values() {
        assert_eq!(preset(NoiseLevel::Moderate), spec(1.6, 0.02, 0.010, 0.30));
        assert_eq!(preset(NoiseLevel::Severe), spec(1.4, 0.08, 0.10, 0.30));
        assert_eq!(preset(NoiseLevel::Extreme), spec(1.2, 0.12, 0.15, 0.50));
        assert_eq!(preset(NoiseLevel::Light), spec(1.8, 0.01, 0.005, 0.15));
        assert!(preset(NoiseLevel::None).is_bypass());
        assert!(preset_by_name("bogus").is_err());
        assert_eq!(preset_by_name("extreme").unwrap(), preset(NoiseLevel::Extreme));
        for l in NoiseLevel::ALL {
            assert_eq!(l.to_string().parse::<NoiseLevel>().unwrap(), l);
            preset(l).validate().unwrap();
        }
    }

    #[test]
    fn invalid_alpha_rejected() {
        let mut r = rng::seeded(0);
        assert!(sample_sas(&spec(0.0, 1.0, 0.0, 0.0), &mut r).is_err());
        assert!(sample_sas(&spec(2.1, 1.0, 0.0, 0.0), &mut r).is_err());
        let mut skew = spec(1.5, 1.0, 0.0, 0.0);
        skew.eta = 0.5;
        assert!(skew.validate().is_err());
    }

    #[test]
    fn gaussian_case_variance() {
        let s = spec(2.0, 0.5, 1.0, 1.0);
        let mut r = rng::seeded(42);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_sas(&s, &mut r).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn cauchy_case_quartiles() {
        let s = spec(1.0, 1.0, 1.0, 1.0);
        let mut r = rng::seeded(7);
        let mut xs: Vec<f64> = (0..100_000).map(|_| sample_sas(&s, &mut r).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[(p * xs.len() as f64) as usize];
        assert!(q(0.5).abs() < 0.03);
        assert!((q(0.75) - q(0.25) - 2.0).abs() < 0.06);
    }

    #[test]
    fn vanishing_scale_gives_vanishing_draws() {
        let mut r = rng::seeded(1);
        for alpha in [2.0, 1.6, 1.0, 0.7] {
            let s = spec(alpha, 1e-14, 1.0, 1.0);
            let max = (0..1000).map(|_| sample_sas(&s, &mut r).unwrap().abs()).fold(0.0, f64::max);
            assert!(max < 1e-3, "alpha {alpha}: {max}");
        }
    }

    #[test]
    fn sample_corruption_edge_cases() {
        let h = FeatureVector::benign(vec![1.0; 50], Some(2));
        let mut r = rng::seeded(3);
        let out = corrupt_sample(&h, &spec(1.5, 1.0, 0.0, 1.0), &mut r).unwrap();
        assert_eq!(out.values, h.values);
        assert!(out.noisy);
        let tiny = corrupt_sample(&h, &spec(1.5, 1e-16, 1.0, 1.0), &mut r).unwrap();
        assert!(tiny.values.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let mut adv = h.clone();
        adv.provenance = Provenance::Adversarial;
        let out = corrupt_sample(&adv, &spec(1.5, 1.0, 0.5, 1.0), &mut r).unwrap();
        assert_eq!(out.provenance, Provenance::Adversarial);
        assert_eq!(out.source_label, Some(2));
    }

    #[test]
    fn corrupted_count_near_binomial_mean() {
        let s = spec(1.6, 0.02, 0.01, 1.0);
        let mut r = rng::seeded(9);
        // mean p_b*d = 100 with sd ~10: the trial average sits inside the
        // 3-sigma band of a mean of 20, single trials inside 4.5 sigma
        let hits: Vec<usize> = (0..20)
            .map(|_| corrupt_values(&mut vec![0.0; 10_000], &s, &mut r))
            .collect();
        let mean = hits.iter().sum::<usize>() as f64 / hits.len() as f64;
        assert!((mean - 100.0).abs() < 30.0 / 20f64.sqrt(), "{hits:?}");
        assert!(hits.iter().all(|h| (55..=145).contains(h)), "{hits:?}");
    }

    #[test]
    fn batch_fraction_is_exact() {
        let cut = CutPoint {
            label: "t".into(),
            layer_index: 1,
            feature_dim: 4,
            shape: vec![4],
        };
        let samples: Vec<_> = (0..100).map(|i| FeatureVector::benign(vec![i as f64; 4], Some(0))).collect();
        let batch = FeatureDataset::new(cut, Split::Test, samples).unwrap();
        let mut r = rng::seeded(5);
        let count = |f_n: f64, r: &mut rng::Rng| {
            corrupt_batch(&batch, &spec(1.6, 0.02, 0.5, f_n), r)
                .unwrap()
                .samples
                .iter()
                .filter(|s| s.noisy)
                .count()
        };
        assert_eq!(count(0.0, &mut r), 0);
        assert_eq!(count(1.0, &mut r), 100);
        assert_eq!(count(0.30, &mut r), 30);
        let unchanged = corrupt_batch(&batch, &spec(1.6, 0.02, 0.5, 0.0), &mut r).unwrap();
        assert_eq!(unchanged, batch);
    }
}
