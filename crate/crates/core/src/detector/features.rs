use serde::{Deserialize, Serialize};

use super::advae::AdVae;
use crate::error::{Error, Result};
use crate::split::FeatureVector;

/// Per-sample detection statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionFeatures {
    /// `||h - h_r||^2`
    pub re: f64,
    /// `||mu - mu_T||`
    pub ls: f64,
    /// Median of `|h - h_r|`.
    pub res_median: f64,
    /// Median absolute deviation of `|h - h_r|`.
    pub res_mad: f64,
}

impl DetectionFeatures {
    /// Noise-aware 4-vector.
    pub fn full(&self) -> Vec<f64> {
        vec![self.re, self.ls, self.res_median, self.res_mad]
    }

    /// Noise-unaware `(re, ls)` projection.
    pub fn baseline(&self) -> Vec<f64> {
        vec![self.re, self.ls]
    }

    pub fn is_valid(&self) -> bool {
        self.full().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Median with ties between the two middle order statistics averaged.
/// Reorders `v`. Returns 0 for an empty slice.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    let (_, hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        return hi;
    }
    let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lo + (hi - lo) / 2.0
}

pub fn median(v: &[f64]) -> f64 {
    median_in_place(&mut v.to_vec())
}

/// `(median(r), median(|r_i - median(r)|))`
pub fn median_and_mad(r: &[f64]) -> (f64, f64) {
    let mut buf = r.to_vec();
    let m = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - m).abs();
    }
    (m, median_in_place(&mut buf))
}

/// Statistics from an input and its reconstruction plus the two latents.
pub fn features_from_parts(h: &[f64], recon: &[f64], mu: &[f64], mu_t: &[f64]) -> DetectionFeatures {
    let residual: Vec<f64> = h.iter().zip(recon).map(|(a, b)| (a - b).abs()).collect();
    let re = residual.iter().map(|r| r * r).sum();
    let ls = mu.iter().zip(mu_t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let (res_median, res_mad) = median_and_mad(&residual);
    DetectionFeatures {
        re,
        ls,
        res_median,
        res_mad,
    }
}

pub fn extract_features(advae: &AdVae, h: &FeatureVector) -> Result<DetectionFeatures> {
    let a = advae.analyze(&h.values)?;
    Ok(features_from_parts(&h.values, &a.recon, &a.mu, &a.mu_t))
}

/// `(re, ls)` for the noise-unaware baseline.
pub fn baseline_features(advae: &AdVae, h: &FeatureVector) -> Result<Vec<f64>> {
    Ok(extract_features(advae, h)?.baseline())
}

pub const STD_FLOOR: f64 = 1e-9;

/// Per-coordinate affine map fitted on benign rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Usage(format!("standardizer needs at least 2 rows, got {}", rows.len())));
        }
        let dim = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::shape("standardizer row", &[dim], &[r.len()]));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for (k, s) in std.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(*s >= STD_FLOOR) {
                log::warn!("detection feature {k} is constant on the training set; std floored at {STD_FLOOR}");
                *s = STD_FLOOR;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_residual_example() {
        let h = [2.0, 3.0, 4.0, 5.0];
        let r = [1.0, 2.0, 3.0, 4.0];
        let f = features_from_parts(&h, &r, &[0.5], &[0.5]);
        assert_eq!(f, DetectionFeatures { re: 4.0, ls: 0.0, res_median: 1.0, res_mad: 0.0 });
        let zero = features_from_parts(&h, &h, &[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(zero, DetectionFeatures::default());
    }

    #[test]
    fn spike_barely_moves_mad() {
        assert_eq!(median_and_mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), (3.0, 1.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn baseline_is_projection() {
        let f = DetectionFeatures { re: 1.0, ls: 2.0, res_median: 3.0, res_mad: 4.0 };
        assert_eq!(f.baseline(), f.full()[..2].to_vec());
    }

    #[test]
    fn standardized_training_set_is_centered() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i) as f64 * 0.1, 7.0]).collect();
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.std[2], STD_FLOOR);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        for k in 0..2 {
            let m = z.iter().map(|r| r[k]).sum::<f64>() / 50.0;
            let v = z.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-9 && (v.sqrt() - 1.0).abs() < 1e-9);
        }
        assert_ne!(s.apply(&s.apply(&rows[3])), s.apply(&rows[3]));
        assert!(Standardizer::fit(&rows[..1]).is_err());
    }

    proptest! {
        #[test]
        fn median_matches_sorted(v in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            let expect = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
            prop_assert!((median(&v) - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }

        #[test]
        fn features_nonnegative(h in proptest::collection::vec(-1e3f64..1e3, 1..30), shift in -5.0f64..5.0) {
            let r: Vec<f64> = h.iter().map(|v| v * 0.7 + shift).collect();
            prop_assert!(features_from_parts(&h, &r, &[shift], &[0.0]).is_valid());
        }
    }
}
