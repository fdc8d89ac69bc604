use rand::{Rng, RngExt};

use super::backward::{loss_and_grad, probe, targets};
use super::loss::sigmoid;
use super::{TrainSample, TrainingBatch};
use crate::attdet::{init_params, ArchConfig, GridShape, ModelParams};
use crate::channel::{sample_re, snr_to_noise_var, ChannelConfig, ChannelSampler};
use crate::error::{Error, Result};
use crate::modem::Constellation;

/// Coordinates above which only a random subset is checked.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSET: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub param_count: usize,
    pub loss: f64,
    /// Coordinates whose probes changed a ReLU pattern and were re-measured
    /// with a smaller step.
    pub kink_retries: usize,
}

/// `|a−b| / (|a|+|b|+1e-12)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

/// Loss change relative to the reference logits `base`, computed term by
/// term as `ln(1+σ(ℓ₀)·expm1(ℓ−ℓ₀)) − b·(ℓ−ℓ₀)` so that no rounding of the
/// loss value itself enters the difference quotient.
fn loss_delta(base: &[f64], logits: &[f64], bits: &[u8], mask: &[bool], active: f64) -> f64 {
    let mut acc = 0.0;
    for (((&l0, &l), &b), &m) in base.iter().zip(logits).zip(bits).zip(mask) {
        if m {
            let d = l - l0;
            acc += (sigmoid(l0) * d.exp_m1()).ln_1p() - b as f64 * d;
        }
    }
    acc / active
}

/// Compares the analytic gradient at `params` with central differences.
///
/// A probe pair that flips any ReLU relative to the unperturbed pass
/// straddles a kink, where the difference quotient is not a derivative;
/// such coordinates are re-measured with the step cut by 10, up to three
/// times.
pub fn grad_check_at<R: Rng + ?Sized>(
    params: &ModelParams<f64>,
    batch: &TrainingBatch<f64>,
    eps: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (bits, mask) = targets(&batch.samples, params.arch().max_bits)?;
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::EmptyMask);
    }
    let active = active as f64;
    let (loss, grad) = loss_and_grad(params, &batch.samples, batch.grid, active)?;
    let (base, pattern) = probe(params, &batch.samples, batch.grid)?;
    let n = params.len();
    let coords: Vec<usize> =
        if n > FULL_CHECK_LIMIT { (0..SUBSET).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
    let mut work = params.clone();
    let mut worst = (0.0, 0);
    let mut kink_retries = 0;
    for &i in &coords {
        let orig = work.flat()[i];
        let mut step = eps;
        let fd = loop {
            work.flat_mut()[i] = orig + step;
            let (up, p_up) = probe(&work, &batch.samples, batch.grid)?;
            work.flat_mut()[i] = orig - step;
            let (down, p_down) = probe(&work, &batch.samples, batch.grid)?;
            work.flat_mut()[i] = orig;
            let smooth = p_up == pattern && p_down == pattern;
            if smooth || step < eps * 1e-3 {
                let du = loss_delta(&base, &up, &bits, &mask, active);
                let dd = loss_delta(&base, &down, &bits, &mask, active);
                break (du - dd) / (2.0 * step);
            }
            kink_retries += 1;
            step /= 10.0;
        };
        let e = rel_error(grad[i], fd);
        if !e.is_finite() {
            return Err(Error::NonFinite("gradient check"));
        }
        if e > worst.0 {
            worst = (e, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: coords.len(),
        param_count: n,
        loss,
        kink_retries,
    })
}

/// Random batch for gradient checks: QPSK at 10 dB, nine REs on a 3x3 grid
/// with smoothing and four otherwise.
pub fn grad_check_batch<R: Rng + ?Sized>(
    arch: &ArchConfig,
    channel: &ChannelConfig,
    rng: &mut R,
) -> Result<TrainingBatch<f64>> {
    let sampler = ChannelSampler::<f64>::new(channel)?;
    let c = Constellation::<f64>::new(4)?;
    let (count, grid) = if arch.score_smoothing { (9, Some(GridShape { rows: 3, cols: 3 })) } else { (4, None) };
    let noise_var = snr_to_noise_var(10.0, channel.n_tx);
    let samples = (0..count).map(|_| TrainSample::from_re(sample_re(&sampler, &c, noise_var, rng), 2)).collect();
    Ok(TrainingBatch { samples, grid })
}

/// Gradient check on a fresh model with every parameter jittered, so biases
/// and identity-initialized kernels are exercised away from their init.
pub fn grad_check<R: Rng + ?Sized>(
    arch: &ArchConfig,
    channel: &ChannelConfig,
    eps: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut params = init_params::<f64, _>(arch, channel.n_rx, rng)?;
    for v in params.flat_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let batch = grad_check_batch(arch, channel, rng)?;
    grad_check_at(&params, &batch, eps, rng)
}
