//! One-class SVM with an RBF kernel, dual solved by SMO.
//!
//! Dual: minimize `1/2 a^T K a` subject to `sum(a) = 1` and
//! `0 <= a_i <= 1 / (nu * n)`. Each step moves mass between the maximally
//! violating pair and stops once `max G_low - min G_up <= tol`, where
//! `G = K a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const KKT_TOLERANCE: f64 = 1e-6;
pub const MIN_TRAINING_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSvmModel {
    pub support: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Final maximal KKT violation.
    pub kkt_residual: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

/// `1 / (4 * mean pairwise squared distance)`, falling back to 1 when all
/// points coincide.
pub fn default_gamma(x: &[Vec<f64>]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 1.0;
    }
    let sums = par::map_range(n, |i| x[i + 1..].iter().map(|b| sq_dist(&x[i], b)).sum::<f64>());
    let mean = sums.iter().sum::<f64>() / (n * (n - 1) / 2) as f64;
    if mean > 0.0 {
        1.0 / (4.0 * mean)
    } else {
        1.0
    }
}

pub fn kernel_matrix(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    par::map_range(x.len(), |i| x.iter().map(|b| rbf(gamma, &x[i], b)).collect())
}

/// Box bound `1 / (nu * n)`.
pub fn upper_bound(nu: f64, n: usize) -> f64 {
    1.0 / (nu * n as f64)
}

/// Feasible start: `floor(1 / C)` coefficients at `C`, the rest of the unit
/// mass on the next one.
pub fn initial_alpha(n: usize, c: f64) -> Vec<f64> {
    let mut alpha = vec![0.0; n];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        let take = c.min(left);
        *a = take;
        left -= take;
    }
    alpha
}

/// `rho` from the gradient: mean over free coefficients, else the midpoint
/// of the feasible interval.
pub fn offset(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let eps = 1e-12 * c.max(1.0);
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&a, &g) in alpha.iter().zip(grad) {
        if a > eps && a < c - eps {
            sum += g;
            free += 1;
        } else if a >= c - eps {
            lower = lower.max(g);
        } else {
            upper = upper.min(g);
        }
    }
    if free > 0 {
        return sum / free as f64;
    }
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => (lower + upper) / 2.0,
        (true, false) => lower,
        (false, true) => upper,
        _ => 0.0,
    }
}

pub fn train_ocsvm(x: &[Vec<f64>], nu: f64, gamma: f64) -> Result<OcSvmModel> {
    let n = x.len();
    if n < MIN_TRAINING_POINTS {
        return Err(Error::Usage(format!("one-class SVM needs at least {MIN_TRAINING_POINTS} points, got {n}")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Config(format!("nu_svm must lie in (0, 1], got {nu}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("rbf gamma must be positive, got {gamma}")));
    }
    let dim = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::shape("one-class SVM input", &[dim], &[r.len()]));
    }
    let k = kernel_matrix(x, gamma);
    let c = upper_bound(nu, n);
    let mut alpha = initial_alpha(n, c);
    let mut grad: Vec<f64> = (0..n).map(|i| k[i].iter().zip(&alpha).map(|(a, b)| a * b).sum()).collect();
    let max_iter = (100 * n).max(100_000);
    let mut violation = f64::INFINITY;
    for _ in 0..max_iter {
        let (mut up, mut g_up) = (usize::MAX, f64::INFINITY);
        let (mut low, mut g_low) = (usize::MAX, f64::NEG_INFINITY);
        for t in 0..n {
            if alpha[t] < c && grad[t] < g_up {
                up = t;
                g_up = grad[t];
            }
            if alpha[t] > 0.0 && grad[t] > g_low {
                low = t;
                g_low = grad[t];
            }
        }
        violation = g_low - g_up;
        if violation <= KKT_TOLERANCE || up == usize::MAX || low == usize::MAX {
            violation = violation.max(0.0);
            break;
        }
        let eta = (k[up][up] + k[low][low] - 2.0 * k[up][low]).max(1e-12);
        let step = (violation / eta).min(c - alpha[up]).min(alpha[low]);
        alpha[up] += step;
        alpha[low] -= step;
        if c - alpha[up] < 1e-15 * c {
            alpha[up] = c;
        }
        if alpha[low] < 1e-15 * c {
            alpha[low] = 0.0;
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += step * (k[t][up] - k[t][low]);
        }
    }
    if violation > KKT_TOLERANCE {
        return Err(Error::Training(format!(
            "one-class SVM did not converge after {max_iter} iterations (KKT residual {violation:.3e})"
        )));
    }
    let rho = offset(&alpha, &grad, c);
    let (support, alpha) = x.iter().zip(&alpha).filter(|(_, &a)| a > 0.0).map(|(v, &a)| (v.clone(), a)).unzip();
    Ok(OcSvmModel {
        support,
        alpha,
        rho,
        gamma,
        nu,
        kkt_residual: violation,
    })
}

impl OcSvmModel {
    /// `sum_i a_i K(x_i, x) - rho`; negative means outside the boundary.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.alpha).map(|(s, a)| a * rbf(self.gamma, s, x)).sum::<f64>() - self.rho
    }

    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect()
    }

    #[test]
    fn dual_is_feasible_and_converged() {
        let x = cloud(60, 1);
        let m = train_ocsvm(&x, 0.2, default_gamma(&x)).unwrap();
        let c = upper_bound(0.2, 60);
        assert!((m.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.alpha.iter().all(|&a| a > 0.0 && a <= c));
        assert!(m.kkt_residual < KKT_TOLERANCE);
        let flagged = x.iter().filter(|p| m.decision(p) < 0.0).count();
        assert!(flagged as f64 / 60.0 <= 0.2 + 0.05);
    }

    #[test]
    fn identical_points_are_inliers() {
        let x = vec![vec![0.3, -0.2]; 12];
        let m = train_ocsvm(&x, 0.5, 1.0).unwrap();
        assert!(m.decision(&[0.3, -0.2]) >= -1e-12);
    }

    #[test]
    fn far_point_tends_to_minus_rho() {
        let x = cloud(20, 2);
        let m = train_ocsvm(&x, 0.25, 0.5).unwrap();
        let far = m.decision(&[1e3, 1e3]);
        assert!(far < 0.0);
        assert!((far + m.rho).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(train_ocsvm(&cloud(5, 0), 0.5, 1.0).is_err());
        assert!(train_ocsvm(&cloud(20, 0), 0.0, 1.0).is_err());
        assert!(train_ocsvm(&cloud(20, 0), 0.5, 0.0).is_err());
    }

    #[test]
    fn initial_alpha_is_feasible() {
        let a = initial_alpha(10, 1.0 / 3.5);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(a.iter().filter(|&&v| v > 0.0).count(), 4);
    }
}
