use serde::{Deserialize, Serialize};

use super::CutPoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Benign,
    Adversarial,
}

/// Flattened activation at a cut point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_label: Option<usize>,
    pub provenance: Provenance,
    pub noisy: bool,
}

impl FeatureVector {
    pub fn benign(values: Vec<f64>, source_label: Option<usize>) -> Self {
        Self {
            values,
            source_label,
            provenance: Provenance::Benign,
            noisy: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub cut: CutPoint,
    pub split: Split,
    pub samples: Vec<FeatureVector>,
}

impl FeatureDataset {
    pub fn new(cut: CutPoint, split: Split, samples: Vec<FeatureVector>) -> Result<Self> {
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.dim() != cut.feature_dim) {
            return Err(Error::shape(
                format!("feature sample {i} at cut {}", cut.label),
                &[cut.feature_dim],
                &[s.dim()],
            ));
        }
        Ok(Self { cut, split, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.values.clone()).collect()
    }
}
