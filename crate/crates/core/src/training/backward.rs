//! Reverse-mode pass through the attention detector.
//!
//! Mirrors [`forward_trace`] stage by stage. Tied tensors share offsets in
//! the flat layout, so their gradients accumulate without extra bookkeeping.

use super::loss::bce_scaled;
use super::TrainSample;
use crate::attdet::kernels::{acc_bias_grad, acc_weight_grad, input_grad};
use crate::attdet::{
    depthwise_backward, forward_trace, logit_slot_to_bit, AttInput, GridShape, MlpCache, MlpShape, ModelParams, Trace,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Backpropagates `dy` through a two-layer MLP, accumulating parameter
/// gradients into `g`; returns the input gradient when asked.
fn mlp_backward<T: Scalar>(
    p: &[T],
    s: &MlpShape,
    x: &[T],
    cache: &MlpCache<T>,
    dy: &[T],
    g: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let rows = dy.len() / s.output;
    let mut dh = vec![T::zero(); rows * s.hidden];
    input_grad(dy, s.output, &p[s.w2()], s.hidden, &mut dh, false);
    for (d, &h) in dh.iter_mut().zip(&cache.hidden) {
        if h <= T::zero() {
            *d = T::zero();
        }
    }
    acc_weight_grad(&cache.hidden, s.hidden, dy, s.output, &mut g[s.w2()]);
    acc_bias_grad(dy, s.output, &mut g[s.b2()]);
    acc_weight_grad(x, s.input, &dh, s.hidden, &mut g[s.w1()]);
    acc_bias_grad(&dh, s.hidden, &mut g[s.b1()]);
    want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * s.input];
        input_grad(&dh, s.hidden, &p[s.w1()], s.input, &mut dx, false);
        dx
    })
}

fn gather_cols<T: Scalar>(x: &[T], width: usize, start: usize, len: usize) -> Vec<T> {
    x.chunks_exact(width).flat_map(|r| r[start..start + len].iter().copied()).collect()
}

fn scatter_add_cols<T: Scalar>(dst: &mut [T], width: usize, start: usize, src: &[T], len: usize) {
    for (d, s) in dst.chunks_exact_mut(width).zip(src.chunks_exact(len)) {
        for (a, &b) in d[start..start + len].iter_mut().zip(s) {
            *a += b;
        }
    }
}

/// Accumulates `∂L/∂θ` into `g` given `∂L/∂logits`.
pub(crate) fn backward_trace<T: Scalar>(params: &ModelParams<T>, trace: &Trace<T>, d_logits: &[T], g: &mut [T]) {
    let p = params.flat();
    let arch = params.arch();
    let layout = params.layout();
    let (d, dh, nt) = (layout.d, layout.d_head, trace.n_tx);
    let rows = trace.batch * nt;

    let mut dv = mlp_backward(p, &layout.mlp_llr, &trace.state.v, &trace.llr, d_logits, g, true).unwrap();
    let mut dq = vec![T::zero(); rows * d];
    let mut dk = vec![T::zero(); rows * d];

    for (cache, block) in trace.layers.iter().zip(&layout.blocks).rev() {
        let d_mix = mlp_backward(p, &block.mlp_h, &cache.v_mix, &cache.mlp_h, &dv, g, true).unwrap();
        let mut dv_in = if arch.residual { dv } else { vec![T::zero(); rows * d] };
        for (h, (hs, hc)) in block.heads.iter().zip(&cache.heads).enumerate() {
            let dvp = gather_cols(&d_mix, d, h * dh, dh);

            // v'_i = Σ_j α_ij ⊙ ṽ_j
            let mut d_alpha_diag = vec![T::zero(); rows * dh];
            let mut d_alpha_off = vec![T::zero(); rows * nt.saturating_sub(1) * dh];
            let mut d_vt = vec![T::zero(); rows * dh];
            for bi in 0..rows {
                let b = bi / nt;
                let i = bi % nt;
                let gi = &dvp[bi * dh..(bi + 1) * dh];
                let mut jj = 0;
                for j in 0..nt {
                    let (alpha, d_alpha) = if i == j {
                        (&hc.alpha_diag[bi * dh..(bi + 1) * dh], &mut d_alpha_diag[bi * dh..(bi + 1) * dh])
                    } else {
                        let r = (bi * (nt - 1) + jj) * dh;
                        jj += 1;
                        (&hc.alpha_off[r..r + dh], &mut d_alpha_off[r..r + dh])
                    };
                    let bj = b * nt + j;
                    let vj = &hc.vt[bj * dh..(bj + 1) * dh];
                    let dvj = &mut d_vt[bj * dh..(bj + 1) * dh];
                    for c in 0..dh {
                        d_alpha[c] = gi[c] * vj[c];
                        dvj[c] += gi[c] * alpha[c];
                    }
                }
            }

            let d_diag_in = mlp_backward(p, &hs.mlp_s, &hc.diag_in, &hc.mlp_s, &d_alpha_diag, g, true).unwrap();
            let d_off_in = match &hc.mlp_i {
                Some(c) => mlp_backward(p, &hs.mlp_i, &hc.off_in, c, &d_alpha_off, g, true).unwrap(),
                None => Vec::new(),
            };
            let mut d_scores = vec![T::zero(); rows * nt * dh];
            for bi in 0..rows {
                let i = bi % nt;
                let mut jj = 0;
                for j in 0..nt {
                    let dst = (bi * nt + j) * dh;
                    let src = if i == j {
                        &d_diag_in[bi * dh..(bi + 1) * dh]
                    } else {
                        let r = (bi * (nt - 1) + jj) * dh;
                        jj += 1;
                        &d_off_in[r..r + dh]
                    };
                    d_scores[dst..dst + dh].copy_from_slice(src);
                }
            }

            let d_prod = match (&hc.dw, hs.depthwise, hs.pointwise) {
                (Some(dw), Some(dwo), Some(pwo)) => {
                    acc_weight_grad(dw, dh, &d_scores, dh, &mut g[pwo..pwo + dh * dh]);
                    let mut d_dw = vec![T::zero(); d_scores.len()];
                    input_grad(&d_scores, dh, &p[pwo..pwo + dh * dh], dh, &mut d_dw, false);
                    depthwise_backward(&hc.prod, &p[dwo..dwo + 9 * dh], &d_dw, &trace.conv, &mut g[dwo..dwo + 9 * dh])
                }
                _ => d_scores,
            };

            // prod_ij = q̃_i ⊙ k̃_j
            let mut d_qt = vec![T::zero(); rows * dh];
            let mut d_kt = vec![T::zero(); rows * dh];
            for bi in 0..rows {
                let b = bi / nt;
                for j in 0..nt {
                    let bj = b * nt + j;
                    let row = (bi * nt + j) * dh;
                    for c in 0..dh {
                        let gp = d_prod[row + c];
                        d_qt[bi * dh + c] += gp * hc.kt[bj * dh + c];
                        d_kt[bj * dh + c] += gp * hc.qt[bi * dh + c];
                    }
                }
            }

            let mut tmp = vec![T::zero(); rows * dh];
            let proj = |off: usize| off..off + dh * dh;
            acc_weight_grad(&trace.embed.q_slices[h], dh, &d_qt, dh, &mut g[proj(hs.proj_q)]);
            input_grad(&d_qt, dh, &p[proj(hs.proj_q)], dh, &mut tmp, false);
            scatter_add_cols(&mut dq, d, h * dh, &tmp, dh);
            acc_weight_grad(&trace.embed.k_slices[h], dh, &d_kt, dh, &mut g[proj(hs.proj_k)]);
            input_grad(&d_kt, dh, &p[proj(hs.proj_k)], dh, &mut tmp, false);
            scatter_add_cols(&mut dk, d, h * dh, &tmp, dh);
            acc_weight_grad(&hc.v_slice, dh, &d_vt, dh, &mut g[proj(hs.proj_v)]);
            input_grad(&d_vt, dh, &p[proj(hs.proj_v)], dh, &mut tmp, false);
            scatter_add_cols(&mut dv_in, d, h * dh, &tmp, dh);
        }
        dv = dv_in;
    }

    let e = &trace.embed;
    match &e.k {
        Some(kc) => {
            mlp_backward(p, &layout.mlp_q, &e.chan_in, &e.q, &dq, g, false);
            mlp_backward(p, &layout.mlp_k, &e.chan_in, kc, &dk, g, false);
        }
        None => {
            for (a, &b) in dq.iter_mut().zip(&dk) {
                *a += b;
            }
            mlp_backward(p, &layout.mlp_q, &e.chan_in, &e.q, &dq, g, false);
        }
    }
    mlp_backward(p, &layout.mlp_v, &e.mf_in, &e.v, &dv, g, false);
}

/// Per-output targets and mask in logit slot order.
pub(crate) fn targets(samples: &[TrainSample<impl Scalar>], max_bits: usize) -> Result<(Vec<u8>, Vec<bool>)> {
    let mut bits = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        let bps = s.bits_per_symbol;
        if bps == 0 || bps > max_bits || bps % 2 != 0 {
            return Err(Error::Config(format!("model supports up to {max_bits} bits per symbol, sample has {bps}")));
        }
        for layer in &s.bits {
            if layer.len() != bps {
                return Err(Error::LengthMismatch { len: layer.len(), bits_per_symbol: bps });
            }
            for slot in 0..max_bits {
                let active = slot < bps;
                mask.push(active);
                bits.push(if active { layer[logit_slot_to_bit(slot, bps)] } else { 0 });
            }
        }
    }
    Ok((bits, mask))
}

/// Loss and gradient of a contiguous run of samples, normalized by
/// `normalizer` active bits rather than the run's own count.
pub(crate) fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[TrainSample<T>],
    grid: Option<GridShape>,
    normalizer: T,
) -> Result<(T, Vec<T>)> {
    let inputs: Vec<AttInput<'_, T>> = samples.iter().map(|s| AttInput { h_est: &s.h_est, y: &s.y }).collect();
    let trace = forward_trace(params, &inputs, grid)?;
    let (bits, mask) = targets(samples, params.arch().max_bits)?;
    let (loss, d_logits) = bce_scaled(&trace.logits, &bits, &mask, normalizer);
    let mut g = vec![T::zero(); params.len()];
    backward_trace(params, &trace, &d_logits, &mut g);
    Ok((loss, g))
}

/// Logits in slot order with the ReLU activation pattern that produced them.
pub(crate) fn probe<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[TrainSample<T>],
    grid: Option<GridShape>,
) -> Result<(Vec<T>, Vec<bool>)> {
    let inputs: Vec<AttInput<'_, T>> = samples.iter().map(|s| AttInput { h_est: &s.h_est, y: &s.y }).collect();
    let trace = forward_trace(params, &inputs, grid)?;
    let pattern = trace.activation_pattern();
    Ok((trace.logits, pattern))
}
