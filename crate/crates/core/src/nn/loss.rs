//! Classification, reconstruction and latent-regularisation losses.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::invalid;
use crate::Result;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Numerically stable softmax over `logits`, in place.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Mean binary cross-entropy of probabilities `probs` against `targets` in {0, 1}.
pub fn bce_loss(probs: &[f64], targets: &[u8]) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(invalid!("bce: {} probabilities for {} targets", probs.len(), targets.len()));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(targets) {
        let p = clamp_prob(p);
        total -= match y {
            1 => p.ln(),
            0 => (1.0 - p).ln(),
            other => return Err(invalid!("bce target {other} is not 0 or 1")),
        };
    }
    Ok(total / probs.len() as f64)
}

/// Mean cross-entropy; `probs` is row-major `[batch, n_classes]`.
pub fn ce_loss(probs: &[f64], n_classes: usize, targets: &[usize]) -> Result<f64> {
    if n_classes == 0 || targets.is_empty() || probs.len() != n_classes * targets.len() {
        return Err(invalid!("ce: {} probabilities for {} targets of {n_classes} classes", probs.len(), targets.len()));
    }
    let mut total = 0.0;
    for (row, &t) in probs.chunks_exact(n_classes).zip(targets) {
        if t >= n_classes {
            return Err(invalid!("ce target {t} outside {n_classes} classes"));
        }
        total -= clamp_prob(row[t]).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Gradient of `-ln softmax(logits)[target]` with respect to the logits.
pub fn softmax_ce_grad(probs: &[f64], target: usize, scale: f64, grad_logits: &mut [f64]) {
    for (i, (g, &p)) in grad_logits.iter_mut().zip(probs).enumerate() {
        *g = scale * (p - if i == target { 1.0 } else { 0.0 });
    }
}

/// Mean squared error over all elements.
pub fn mse_loss(recon: &[f64], target: &[f64]) -> Result<f64> {
    if recon.len() != target.len() || recon.is_empty() {
        return Err(invalid!("mse: {} reconstructed values for {} targets", recon.len(), target.len()));
    }
    let sum: f64 = recon.iter().zip(target).map(|(r, t)| (r - t) * (r - t)).sum();
    Ok(sum / recon.len() as f64)
}

/// `scale * d mse / d recon`.
pub fn mse_grad(recon: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) {
    let k = 2.0 * scale / recon.len() as f64;
    for ((g, r), t) in grad.iter_mut().zip(recon).zip(target) {
        *g = k * (r - t);
    }
}

/// Diagonal Gaussian over the two-dimensional latent space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatentDistribution {
    pub mu: [f64; 2],
    /// Log-variance; the standard deviation is `exp(log_var / 2)`.
    pub log_var: [f64; 2],
}

impl LatentDistribution {
    pub fn sigma(&self) -> [f64; 2] {
        [(self.log_var[0] / 2.0).exp(), (self.log_var[1] / 2.0).exp()]
    }
}

/// `KL(N(mu, sigma^2) || N(0, I)) = -1/2 sum(1 + log_var - mu^2 - exp(log_var))`.
pub fn kld_gaussian_standard(lat: &LatentDistribution) -> f64 {
    -0.5 * lat
        .mu
        .iter()
        .zip(&lat.log_var)
        .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Gradients of [`kld_gaussian_standard`] with respect to `(mu, log_var)`.
pub fn kld_grad(lat: &LatentDistribution) -> ([f64; 2], [f64; 2]) {
    let dmu = lat.mu;
    let dlv = [0.5 * (lat.log_var[0].exp() - 1.0), 0.5 * (lat.log_var[1].exp() - 1.0)];
    (dmu, dlv)
}

/// `z = mu + exp(log_var / 2) * noise`.
pub fn reparameterize(lat: &LatentDistribution, noise: [f64; 2]) -> [f64; 2] {
    let s = lat.sigma();
    [lat.mu[0] + s[0] * noise[0], lat.mu[1] + s[1] * noise[1]]
}
