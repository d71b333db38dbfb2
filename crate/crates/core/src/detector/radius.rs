use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RADIUS_QUANTILE: f64 = 0.95;

/// Closed ball around the benign centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusModel {
    pub center: Vec<f64>,
    pub radius: f64,
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl RadiusModel {
    /// Centroid plus the nearest-rank 95th percentile of training distances.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Usage("radius baseline needs at least one row".into()));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut center = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::shape("radius row", &[dim], &[r.len()]));
            }
            for (c, v) in center.iter_mut().zip(r) {
                *c += v / n;
            }
        }
        let mut d: Vec<f64> = rows.iter().map(|r| distance(r, &center)).collect();
        d.sort_by(f64::total_cmp);
        let rank = ((RADIUS_QUANTILE * n).ceil() as usize).clamp(1, d.len());
        let radius = d[rank - 1].max(f64::MIN_POSITIVE);
        Ok(Self { center, radius })
    }

    /// Distance to the boundary; positive means outside.
    pub fn score(&self, x: &[f64]) -> f64 {
        distance(x, &self.center) - self.radius
    }

    pub fn is_anomalous(&self, x: &[f64]) -> bool {
        distance(x, &self.center) > self.radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_ball_and_calibration() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 0.0]).collect();
        let m = RadiusModel::fit(&rows).unwrap();
        assert!(!m.is_anomalous(&m.center));
        let edge = vec![m.center[0] + m.radius, 0.0];
        assert!(!m.is_anomalous(&edge));
        let flagged = rows.iter().filter(|r| m.is_anomalous(r)).count();
        assert!(flagged <= (0.05 * 40.0) as usize + 1);
    }
}
