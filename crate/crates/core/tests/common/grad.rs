//! Central finite-difference checks for layers and VAE objectives.

use rand::Rng;
use rand_distr::StandardNormal;
use splitguard::detector::{identity_transformer, transformer_loss_and_grads};
use splitguard::nn::vae::Vae;
use splitguard::nn::{Conv2d, Dense, Layer, Tensor};
use splitguard::rng::{self, Rng as ChaRng};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so gradients near zero are compared absolutely.
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub kind: &'static str,
    pub checked: usize,
    pub worst: f64,
}

fn normal_tensor(shape: &[usize], r: &mut ChaRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `L = <w, layer(x)>` checked against the input and every parameter.
fn check_layer(kind: &'static str, mut layer: Layer, x: Tensor, r: &mut ChaRng) -> CaseResult {
    let out = layer.forward(&x).unwrap();
    let w = normal_tensor(out.shape(), r);
    let (dx, dp) = layer.backward(&x, &w).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let num = (dot(&w, &layer.forward(&xp).unwrap()) - dot(&w, &layer.forward(&xm).unwrap())) / (2.0 * STEP);
        worst = worst.max(rel_err(dx.data()[i], num));
        checked += 1;
    }
    let n_params = layer.params().len();
    for p in 0..n_params {
        let len = layer.params()[p].len();
        for i in 0..len {
            let orig = layer.params()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = orig + STEP;
            let lp = dot(&w, &layer.forward(&x).unwrap());
            layer.params_mut()[p].data_mut()[i] = orig - STEP;
            let lm = dot(&w, &layer.forward(&x).unwrap());
            layer.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(dp[p].data()[i], (lp - lm) / (2.0 * STEP)));
            checked += 1;
        }
    }
    CaseResult { kind, checked, worst }
}

fn check_vae(kind: &'static str, lambda: f64, r: &mut ChaRng) -> CaseResult {
    let d = r.random_range(2..7);
    let hidden = r.random_range(2..7);
    let latent = r.random_range(1..4);
    let mut vae = Vae::new(d, hidden, latent, r);
    let h: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
    let eps = normal_tensor(&[latent], r);
    let (_, grads) = vae.loss_and_grads(&h, &eps, lambda).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let n_params = vae.params().len();
    for p in 0..n_params {
        for i in 0..vae.params()[p].len() {
            let orig = vae.params()[p].data()[i];
            vae.params_mut()[p].data_mut()[i] = orig + STEP;
            let lp = vae.loss(&h, &eps, lambda).unwrap().total;
            vae.params_mut()[p].data_mut()[i] = orig - STEP;
            let lm = vae.loss(&h, &eps, lambda).unwrap().total;
            vae.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(grads.0[p].data()[i], (lp - lm) / (2.0 * STEP)));
            checked += 1;
        }
    }
    CaseResult { kind, checked, worst }
}

fn check_transformer(r: &mut ChaRng) -> CaseResult {
    let d = r.random_range(2..7);
    let latent = r.random_range(1..4);
    let vae = Vae::new(d, r.random_range(2..7), latent, r);
    let mut t = identity_transformer(latent, 0.3, r);
    let x: Vec<f64> = (0..2 * latent).map(|_| r.sample(StandardNormal)).collect();
    let recon = vae.decode(&Tensor::from_vec(x[..latent].to_vec())).unwrap().into_data();
    // large margin keeps the hinge active
    let (margin, penalty) = (50.0, r.random_range(0.01..1.0));
    let loss = |t: &splitguard::nn::Network| transformer_loss_and_grads(&vae, t, &x, &recon, margin, penalty).unwrap();
    let (_, grads) = loss(&t);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let n_params = t.params().len();
    for p in 0..n_params {
        for i in 0..t.params()[p].len() {
            let orig = t.params()[p].data()[i];
            t.params_mut()[p].data_mut()[i] = orig + STEP;
            let lp = loss(&t).0;
            t.params_mut()[p].data_mut()[i] = orig - STEP;
            let lm = loss(&t).0;
            t.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(grads.0[p].data()[i], (lp - lm) / (2.0 * STEP)));
            checked += 1;
        }
    }
    CaseResult { kind: "transformer", checked, worst }
}

/// Case `i` of the fixed 100-case schedule.
pub fn case(i: usize, seed: u64) -> CaseResult {
    let mut r = rng::stream(seed, i as u64);
    match i % 10 {
        0 | 1 => {
            let (n_in, n_out) = (r.random_range(1..8), r.random_range(1..8));
            let layer = Layer::Dense(Dense::new(n_in, n_out, &mut r));
            let x = normal_tensor(&[n_in], &mut r);
            check_layer("dense", layer, x, &mut r)
        }
        2 | 3 => {
            let (c_in, c_out) = (r.random_range(1..4), r.random_range(1..4));
            let k = r.random_range(1..4);
            let stride = r.random_range(1..3);
            let pad = r.random_range(0..2);
            let side = r.random_range(k.max(3)..7);
            let layer = Layer::Conv2d(Conv2d::new(c_in, c_out, k, stride, pad, &mut r));
            let x = normal_tensor(&[c_in, side, side], &mut r);
            check_layer("conv2d", layer, x, &mut r)
        }
        4 => {
            let shape = [r.random_range(1..4), r.random_range(1..5), r.random_range(1..5)];
            let x = normal_tensor(&shape, &mut r);
            check_layer("relu", Layer::Relu, x, &mut r)
        }
        5 => {
            let size = r.random_range(1..3);
            let stride = r.random_range(1..3);
            let side = r.random_range(size.max(2)..7);
            let x = normal_tensor(&[r.random_range(1..3), side, side], &mut r);
            check_layer("maxpool2d", Layer::MaxPool2d { size, stride }, x, &mut r)
        }
        6 => {
            let x = normal_tensor(&[r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)], &mut r);
            check_layer("flatten", Layer::Flatten, x, &mut r)
        }
        7 => check_vae("vae(lambda=1)", 1.0, &mut r),
        8 => check_vae("vae(lambda=0)", 0.0, &mut r),
        _ => check_transformer(&mut r),
    }
}
