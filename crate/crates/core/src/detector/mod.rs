//! Noise-aware anomaly detection on intermediate features.
//!
//! An adVAE trained on benign (possibly noisy) features yields four
//! statistics per sample; after per-coordinate standardization a one-class
//! SVM decides. The noise-unaware baseline drops the two residual
//! statistics, and the radius baseline replaces the SVM by a ball.

mod advae;
mod features;
mod ocsvm;
mod radius;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use advae::{
    check_benign, identity_transformer, train_advae, transformer_loss_and_grads, AdVae, AdVaeConfig, AdVaeHistory,
    Analysis,
};
pub use features::{
    baseline_features, extract_features, features_from_parts, median, median_and_mad, DetectionFeatures, Standardizer,
    STD_FLOOR,
};
pub use ocsvm::{
    default_gamma, initial_alpha, kernel_matrix, offset, rbf, train_ocsvm, upper_bound, OcSvmModel, KKT_TOLERANCE,
    MIN_TRAINING_POINTS,
};
pub use radius::{RadiusModel, RADIUS_QUANTILE};

use crate::error::{Error, FrameError, Result};
use crate::nn::checkpoint::{self, Reader, Writer};
use crate::nn::vae::Vae;
use crate::split::FeatureVector;

pub const DETECTOR_MAGIC: &[u8; 4] = b"SSDT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NA")]
    NoiseAware,
    #[serde(rename = "NU")]
    NoiseUnaware,
    #[serde(rename = "radius")]
    Radius,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoiseAware, Variant::NoiseUnaware, Variant::Radius];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NoiseAware => "NA",
            Variant::NoiseUnaware => "NU",
            Variant::Radius => "radius",
        }
    }

    /// Detection vector this variant consumes.
    pub fn project(self, f: &DetectionFeatures) -> Vec<f64> {
        match self {
            Variant::NoiseAware => f.full(),
            Variant::NoiseUnaware | Variant::Radius => f.baseline(),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Variant::NoiseAware => 1,
            Variant::NoiseUnaware => 2,
            Variant::Radius => 3,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == t)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "na" => Ok(Variant::NoiseAware),
            "nu" => Ok(Variant::NoiseUnaware),
            "radius" => Ok(Variant::Radius),
            _ => Err(Error::Config(format!("unknown detector variant {s:?} (expected NA, NU or radius)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub advae: AdVaeConfig,
    pub nu_svm: f64,
    /// RBF width; `None` selects [`default_gamma`].
    pub gamma: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            advae: AdVaeConfig::default(),
            nu_svm: 0.05,
            gamma: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.advae.validate()?;
        if !(self.nu_svm > 0.0 && self.nu_svm <= 1.0) {
            return Err(Error::Config(format!("nu_svm must lie in (0, 1], got {}", self.nu_svm)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    OcSvm(OcSvmModel),
    Radius(RadiusModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub anomalous: bool,
    /// Higher means more anomalous.
    pub score: f64,
}

/// Classifies a standardized vector against a trained SVM boundary.
pub fn classify(model: &OcSvmModel, s: &Standardizer, x: &[f64]) -> Verdict {
    let decision = model.decision(&s.apply(x));
    Verdict {
        anomalous: decision < 0.0,
        score: -decision,
    }
}

pub fn radius_classify(model: &RadiusModel, s: &Standardizer, x: &[f64]) -> Verdict {
    let z = s.apply(x);
    Verdict {
        anomalous: model.is_anomalous(&z),
        score: model.score(&z),
    }
}

/// Provenance recorded with a trained detector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorMeta {
    pub cut: String,
    pub noise: String,
}

/// One trained detector variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub variant: Variant,
    pub advae: Arc<AdVae>,
    pub standardizer: Standardizer,
    pub boundary: Boundary,
    pub meta: DetectorMeta,
}

impl Detector {
    /// Fits the variant's standardizer and boundary on benign detection
    /// features computed with `advae`.
    pub fn fit(
        variant: Variant,
        advae: Arc<AdVae>,
        benign: &[DetectionFeatures],
        cfg: &DetectorConfig,
        meta: DetectorMeta,
    ) -> Result<Self> {
        cfg.validate()?;
        let rows: Vec<Vec<f64>> = benign.iter().map(|f| variant.project(f)).collect();
        let standardizer = Standardizer::fit(&rows)?;
        let z: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
        let boundary = match variant {
            Variant::Radius => Boundary::Radius(RadiusModel::fit(&z)?),
            _ => {
                let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(&z));
                Boundary::OcSvm(train_ocsvm(&z, cfg.nu_svm, gamma)?)
            }
        };
        Ok(Self {
            variant,
            advae,
            standardizer,
            boundary,
            meta,
        })
    }

    pub fn judge(&self, f: &DetectionFeatures) -> Verdict {
        let x = self.variant.project(f);
        match &self.boundary {
            Boundary::OcSvm(m) => classify(m, &self.standardizer, &x),
            Boundary::Radius(m) => radius_classify(m, &self.standardizer, &x),
        }
    }

    /// adVAE forward plus boundary decision for one feature vector.
    pub fn detect(&self, h: &FeatureVector) -> Result<Verdict> {
        Ok(self.judge(&extract_features(&self.advae, h)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(DETECTOR_MAGIC);
        w.u8(self.variant.tag());
        w.str(&self.meta.cut);
        w.str(&self.meta.noise);
        w.network(&self.advae.vae.encoder);
        w.network(&self.advae.vae.decoder);
        w.network(&self.advae.transformer);
        w.f64s(&self.standardizer.mean);
        w.f64s(&self.standardizer.std);
        match &self.boundary {
            Boundary::OcSvm(m) => {
                w.u8(1);
                w.f64(m.rho);
                w.f64(m.gamma);
                w.f64(m.nu);
                w.f64(m.kkt_residual);
                w.f64s(&m.alpha);
                for s in &m.support {
                    w.f64s(s);
                }
            }
            Boundary::Radius(m) => {
                w.u8(2);
                w.f64(m.radius);
                w.f64s(&m.center);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, DETECTOR_MAGIC)?;
        let tag = r.u8()?;
        let variant = Variant::from_tag(tag).ok_or_else(|| FrameError::Malformed(format!("unknown variant tag {tag}")))?;
        let meta = DetectorMeta {
            cut: r.str()?,
            noise: r.str()?,
        };
        let enc = r.network()?;
        let dec = r.network()?;
        let transformer = r.network()?;
        let standardizer = Standardizer {
            mean: r.f64s()?,
            std: r.f64s()?,
        };
        let boundary = match r.u8()? {
            1 => {
                let (rho, gamma, nu, kkt_residual) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let alpha = r.f64s()?;
                let support = (0..alpha.len()).map(|_| r.f64s()).collect::<Result<Vec<_>, _>>()?;
                Boundary::OcSvm(OcSvmModel {
                    support,
                    alpha,
                    rho,
                    gamma,
                    nu,
                    kkt_residual,
                })
            }
            2 => {
                let radius = r.f64()?;
                Boundary::Radius(RadiusModel {
                    radius,
                    center: r.f64s()?,
                })
            }
            t => return Err(FrameError::Malformed(format!("unknown boundary tag {t}")).into()),
        };
        r.finish()?;
        let malformed = |e: Error| Error::from(FrameError::Malformed(e.to_string()));
        let vae = Vae::from_networks(enc, dec).map_err(malformed)?;
        let advae = AdVae::from_parts(vae, transformer).map_err(malformed)?;
        if standardizer.dim() != variant.project(&DetectionFeatures::default()).len() {
            return Err(FrameError::Malformed("standardizer width does not match variant".into()).into());
        }
        Ok(Self {
            variant,
            advae: Arc::new(advae),
            standardizer,
            boundary,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::vae::VaeConfig;
    use crate::rng;
    use crate::split::{CutPoint, FeatureDataset, Split};
    use rand::Rng;

    fn toy(n: usize, d: usize, seed: u64) -> FeatureDataset {
        let mut r = rng::seeded(seed);
        let samples = (0..n)
            .map(|_| {
                let a: f64 = r.random_range(0.0..1.0);
                let v = (0..d).map(|j| a * (j as f64 * 0.4).sin() + 0.5).collect();
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

    fn cfg() -> DetectorConfig {
        DetectorConfig {
            advae: AdVaeConfig {
                vae: VaeConfig {
                    latent_dim: 2,
                    hidden: 8,
                    epochs: 3,
                    ..VaeConfig::default()
                },
                transformer_epochs: 2,
                ..AdVaeConfig::default()
            },
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn variants_fit_and_round_trip() {
        let set = toy(120, 8, 1);
        let (ad, _) = train_advae(&set, &cfg().advae, 2).unwrap();
        let ad = Arc::new(ad);
        let feats: Vec<DetectionFeatures> =
            set.samples.iter().map(|h| extract_features(&ad, h).unwrap()).collect();
        assert!(feats.iter().all(DetectionFeatures::is_valid));
        let meta = DetectorMeta {
            cut: "toy".into(),
            noise: "moderate".into(),
        };
        for v in Variant::ALL {
            let det = Detector::fit(v, ad.clone(), &feats, &cfg(), meta.clone()).unwrap();
            let bytes = det.to_bytes();
            assert_eq!(&bytes[..4], b"SSDT");
            let back = Detector::from_bytes(&bytes).unwrap();
            assert_eq!(back, det);
            let far = FeatureVector::benign(vec![50.0; 8], None);
            assert!(det.detect(&far).unwrap().anomalous, "{v}");
            let mean: Vec<f64> = det.standardizer.mean.clone();
            if let Boundary::OcSvm(m) = &det.boundary {
                assert!(classify(m, &det.standardizer, &mean).score < 0.0);
            }
        }
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
        assert_eq!(serde_json::to_string(&Variant::NoiseAware).unwrap(), "\"NA\"");
    }
}
