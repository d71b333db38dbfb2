use super::Tensor;
use crate::error::{Error, Result};

/// `log_sigma` is clamped to `[-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP]` wherever
/// encoders produce it.
pub const LOG_SIGMA_CLAMP: f64 = 10.0;

/// Diagonal Gaussian `N(mu, diag(exp(log_sigma))^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianHead {
    pub fn new(mu: Tensor, log_sigma: Tensor) -> Result<Self> {
        if mu.shape() != log_sigma.shape() {
            return Err(Error::shape("gaussian head", mu.shape(), log_sigma.shape()));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn sigma(&self) -> Tensor {
        self.log_sigma.map(f64::exp)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `z = mu + exp(log_sigma) * eps`, elementwise.
pub fn reparameterize(head: &GaussianHead, eps: &Tensor) -> Result<Tensor> {
    if eps.shape() != head.mu.shape() {
        return Err(Error::shape("reparameterize", head.mu.shape(), eps.shape()));
    }
    let z = head
        .mu
        .data()
        .iter()
        .zip(head.log_sigma.data())
        .zip(eps.data())
        .map(|((m, ls), e)| m + ls.exp() * e)
        .collect();
    Tensor::new(head.mu.shape().to_vec(), z)
}

/// `KL(N(mu, sigma^2) || N(0, I)) = 1/2 * sum(mu^2 + sigma^2 - 1 - log sigma^2)`.
///
/// This is the standard non-negative divergence. The textbook expansion is
/// sometimes printed with the opposite sign (the evidence-lower-bound form);
/// minimizing this quantity is what pulls posteriors toward the prior.
pub fn kl_diag_gaussian(head: &GaussianHead) -> f64 {
    head.mu
        .data()
        .iter()
        .zip(head.log_sigma.data())
        .map(|(&m, &ls)| {
            // sigma^2 - 1 - log sigma^2 computed as expm1(2ls) - 2ls to keep
            // the value exactly 0 at ls = 0 and non-negative near it
            0.5 * (m * m + ((2.0 * ls).exp_m1() - 2.0 * ls))
        })
        .sum()
}

/// Gradients of [`kl_diag_gaussian`] with respect to `mu` and `log_sigma`.
pub fn kl_grads(head: &GaussianHead) -> (Vec<f64>, Vec<f64>) {
    let dmu = head.mu.data().to_vec();
    let dls = head.log_sigma.data().iter().map(|&ls| (2.0 * ls).exp_m1()).collect();
    (dmu, dls)
}
