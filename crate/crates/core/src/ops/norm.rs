//! Batch normalization over the channel (last) axis.
//!
//! Train mode normalizes with the statistics of the tensor being processed
//! (all non-channel axes pooled) and updates running statistics with an
//! exponential moving average; inference mode normalizes with the running
//! statistics alone. Variance is the biased (divide by N) estimate in both
//! the normalization and the running update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel statistics saved by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Running statistics carried between training steps and used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub steps: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            steps: 0,
        }
    }

    pub fn initialized(&self) -> bool {
        self.steps > 0
    }

    /// `running <- (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch: &BnCache, momentum: f64) {
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (1.0 - momentum) * self.var[c] + momentum * batch.var[c];
        }
        self.steps += 1;
    }
}

fn check_channels(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize> {
    let c = *input.shape().last().expect("tensor rank >= 1");
    if gamma.numel() != c || gamma.rank() != 1 {
        return Err(Error::DimMismatch {
            op: "batchnorm",
            axis: "gamma",
            expected: c,
            got: gamma.numel(),
        });
    }
    if beta.numel() != c || beta.rank() != 1 {
        return Err(Error::DimMismatch {
            op: "batchnorm",
            axis: "beta",
            expected: c,
            got: beta.numel(),
        });
    }
    Ok(c)
}

/// Normalize with the input's own statistics; returns the cache needed for
/// the backward pass and the running-stats update.
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BnCache)> {
    let c = check_channels(input, gamma, beta)?;
    let n = input.numel() / c;
    let x = input.data();
    let mut mean = vec![0.0; c];
    for chunk in x.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(chunk) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; c];
    for chunk in x.chunks_exact(c) {
        for ((v, &xv), &m) in var.iter_mut().zip(chunk).zip(&mean) {
            let d = xv - m;
            *v += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= n as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let g = gamma.data();
    let b = beta.data();
    let mut out = vec![0.0; x.len()];
    for (oc, chunk) in out.chunks_exact_mut(c).zip(x.chunks_exact(c)) {
        for ch in 0..c {
            oc[ch] = g[ch] * (chunk[ch] - mean[ch]) * inv_std[ch] + b[ch];
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?;
    Ok((out, BnCache { mean, var, inv_std }))
}

/// Normalize with previously accumulated running statistics.
pub fn batchnorm_infer(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
    eps: f64,
) -> Result<Tensor> {
    let c = check_channels(input, gamma, beta)?;
    if !stats.initialized() {
        return Err(Error::UninitializedBatchNorm);
    }
    if stats.mean.len() != c {
        return Err(Error::DimMismatch {
            op: "batchnorm",
            axis: "running stats",
            expected: c,
            got: stats.mean.len(),
        });
    }
    let g = gamma.data();
    let b = beta.data();
    let inv_std: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for (oc, chunk) in out.chunks_exact_mut(c).zip(x.chunks_exact(c)) {
        for ch in 0..c {
            oc[ch] = g[ch] * (chunk[ch] - stats.mean[ch]) * inv_std[ch] + b[ch];
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// The stateful entry point: train mode normalizes with batch
/// statistics and updates `stats`; infer mode uses `stats` alone.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<Tensor> {
    match mode {
        Mode::Train => {
            let (out, cache) = batchnorm_train(input, gamma, beta, eps)?;
            stats.update(&cache, momentum);
            Ok(out)
        }
        Mode::Infer => batchnorm_infer(input, gamma, beta, stats, eps),
    }
}

/// Gradients through the train-mode normalization, including the dependence
/// of the batch statistics on the input.
pub fn batchnorm_train_backward_into(
    grad_out: &Tensor,
    input: &Tensor,
    gamma: &Tensor,
    cache: &BnCache,
    grad_input: &mut [f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) {
    let c = gamma.numel();
    let n = input.numel() / c;
    let x = input.data();
    let g = gamma.data();
    let go = grad_out.data();

    // Per-channel sums over grad wrt x_hat and x_hat itself.
    let mut sum_g = vec![0.0; c]; // sum of gamma * dy
    let mut sum_gx = vec![0.0; c]; // sum of gamma * dy * x_hat
    for (chunk, xc) in go.chunks_exact(c).zip(x.chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (xc[ch] - cache.mean[ch]) * cache.inv_std[ch];
            let gg = chunk[ch] * g[ch];
            sum_g[ch] += gg;
            sum_gx[ch] += gg * xhat;
            grad_beta[ch] += chunk[ch];
            grad_gamma[ch] += chunk[ch] * xhat;
        }
    }
    let n_f = n as f64;
    for ((gi, chunk), xc) in grad_input
        .chunks_exact_mut(c)
        .zip(go.chunks_exact(c))
        .zip(x.chunks_exact(c))
    {
        for ch in 0..c {
            let xhat = (xc[ch] - cache.mean[ch]) * cache.inv_std[ch];
            let gg = chunk[ch] * g[ch];
            gi[ch] += cache.inv_std[ch] * (gg - sum_g[ch] / n_f - xhat * sum_gx[ch] / n_f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn train_mode_normalizes_to_zero_mean_unit_var() {
        // Batch variance well above eps so the eps term stays below the
        // 1e-6 tolerance on the output variance.
        let mut rng = Rng::seed_from(3);
        let input = Tensor::uniform(&[4, 5, 5, 3], -10.0, 10.0, &mut rng);
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let (out, _) = batchnorm_train(&input, &gamma, &beta, DEFAULT_EPS).unwrap();
        let c = 3;
        let n = out.numel() / c;
        for ch in 0..c {
            let vals: Vec<f64> = out.data().iter().skip(ch).step_by(c).cloned().collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-10, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {ch} var {var}");
        }
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let input = Tensor::uniform(&[2, 3, 3, 2], -1.0, 1.0, &mut Rng::seed_from(9));
        let gamma = Tensor::zeros(&[2]);
        let beta = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let (out, _) = batchnorm_train(&input, &gamma, &beta, DEFAULT_EPS).unwrap();
        for chunk in out.data().chunks_exact(2) {
            assert_eq!(chunk, &[0.5, -1.5]);
        }
    }

    #[test]
    fn running_stats_follow_exponential_update() {
        let mut rng = Rng::seed_from(11);
        let input = Tensor::uniform(&[3, 4, 4, 2], 0.0, 4.0, &mut rng);
        let gamma = Tensor::full(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let mut stats = RunningStats::new(2);

        let (_, c1) = batchnorm_train(&input, &gamma, &beta, DEFAULT_EPS).unwrap();
        stats.update(&c1, DEFAULT_MOMENTUM);
        let input2 = Tensor::uniform(&[3, 4, 4, 2], -1.0, 1.0, &mut rng);
        let (_, c2) = batchnorm_train(&input2, &gamma, &beta, DEFAULT_EPS).unwrap();
        stats.update(&c2, DEFAULT_MOMENTUM);

        // Hand-computed exponential update per channel.
        for ch in 0..2 {
            let m1 = 0.9 * 0.0 + 0.1 * c1.mean[ch];
            let m2 = 0.9 * m1 + 0.1 * c2.mean[ch];
            let v1 = 0.9 * 1.0 + 0.1 * c1.var[ch];
            let v2 = 0.9 * v1 + 0.1 * c2.var[ch];
            assert!((stats.mean[ch] - m2).abs() < 1e-15);
            assert!((stats.var[ch] - v2).abs() < 1e-15);
        }
        assert_eq!(stats.steps, 2);
    }

    #[test]
    fn infer_before_train_is_an_error() {
        let input = Tensor::zeros(&[2, 2, 2, 1]);
        let gamma = Tensor::full(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let mut stats = RunningStats::new(1);
        let err = batchnorm(
            &input,
            &gamma,
            &beta,
            &mut stats,
            Mode::Infer,
            DEFAULT_EPS,
            DEFAULT_MOMENTUM,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UninitializedBatchNorm));
    }
}
