//! Reference solver for the one-class SVM dual by accelerated projected
//! gradient, independent of the SMO implementation.

pub fn kernel(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

/// Euclidean projection onto `{0 <= a_i <= c, sum(a) = 1}` by bisection on
/// the shift.
pub fn project(v: &[f64], c: f64) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, c)).sum::<f64>();
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).clamp(0.0, c)).collect()
}

pub struct Reference {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub points: Vec<Vec<f64>>,
}

impl Reference {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.points.iter().zip(&self.alpha).map(|(p, a)| a * kernel(self.gamma, p, x)).sum::<f64>() - self.rho
    }
}

pub fn solve(points: &[Vec<f64>], nu: f64, gamma: f64) -> Reference {
    let n = points.len();
    let c = 1.0 / (nu * n as f64);
    let k: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| kernel(gamma, a, b)).collect()).collect();
    let lip = k.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let grad = |a: &[f64]| -> Vec<f64> { k.iter().map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum()).collect() };
    let mut x = project(&vec![1.0 / n as f64; n], c);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let g = grad(&y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
        let next = project(&step, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        x = next;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    let g = grad(&x);
    let tol = 1e-9;
    let free: Vec<f64> = x.iter().zip(&g).filter(|(a, _)| **a > tol && **a < c - tol).map(|(_, g)| *g).collect();
    let rho = if free.is_empty() {
        let hi = x.iter().zip(&g).filter(|(a, _)| **a <= tol).map(|(_, g)| *g).fold(f64::INFINITY, f64::min);
        let lo = x.iter().zip(&g).filter(|(a, _)| **a >= c - tol).map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            _ => hi,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    Reference { alpha: x, rho, gamma, points: points.to_vec() }
}
