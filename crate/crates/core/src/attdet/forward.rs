//! Batched forward pass.
//!
//! A batch holds `B` resource elements with the same `N_t` and `N_r`. Token
//! tensors are row-major `[B·N_t x d]` with row `b·N_t + i`; pair tensors are
//! `[B·N_t·N_t x d_h]` with row `(b·N_t + i)·N_t + j`. [`forward_trace`] keeps
//! every intermediate needed by the backward pass.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::kernels::affine;
use super::params::{BlockShape, MlpShape, ModelParams};
use super::smoothing::{depthwise_forward, ConvShape};
use super::{ArchConfig, DEGENERATE_COLUMN_EPS};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::modem::clip_llr;
use crate::scalar::Scalar;

/// REs arranged as consecutive `rows x cols` frames for score smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn single() -> Self {
        Self { rows: 1, cols: 1 }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }
}

/// Channel estimate and received vector of one RE.
#[derive(Debug, Clone, Copy)]
pub struct AttInput<'a, T> {
    pub h_est: &'a ComplexMatrix<T>,
    pub y: &'a [Complex<T>],
}

/// Token embeddings of a batch: queries and keys stay fixed across layers,
/// values evolve.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenState<T> {
    pub batch: usize,
    pub n_tx: usize,
    pub d: usize,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
}

/// `[Re(x), Im(x)]`.
pub fn phi<T: Scalar>(x: &[Complex<T>]) -> Vec<T> {
    x.iter().map(|z| z.re).chain(x.iter().map(|z| z.im)).collect()
}

/// Logit slot `s` of a token carries label bit `logit_slot_to_bit(s, bps)`.
///
/// Slots alternate between the in-phase and quadrature axis from the most
/// significant bit down, so the first two slots are always the two sign
/// bits whatever the order. Masking to `bps` slots then keeps a consistent
/// meaning for every output across modulation orders.
#[inline]
pub fn logit_slot_to_bit(slot: usize, bits_per_symbol: usize) -> usize {
    let per_axis = bits_per_symbol / 2;
    (slot % 2) * per_axis + slot / 2
}

#[derive(Debug, Clone)]
pub(crate) struct MlpCache<T> {
    /// Post-ReLU hidden activations.
    pub hidden: Vec<T>,
}

pub(crate) fn mlp_forward<T: Scalar>(p: &[T], s: &MlpShape, x: &[T]) -> (Vec<T>, MlpCache<T>) {
    let rows = x.len() / s.input;
    let mut hidden = vec![T::zero(); rows * s.hidden];
    affine(x, s.input, &p[s.w1()], Some(&p[s.b1()]), s.hidden, &mut hidden);
    for h in hidden.iter_mut() {
        if *h < T::zero() {
            *h = T::zero();
        }
    }
    let mut out = vec![T::zero(); rows * s.output];
    affine(&hidden, s.hidden, &p[s.w2()], Some(&p[s.b2()]), s.output, &mut out);
    (out, MlpCache { hidden })
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache<T> {
    pub v_slice: Vec<T>,
    pub qt: Vec<T>,
    pub kt: Vec<T>,
    pub vt: Vec<T>,
    /// `q̃_i ⊙ k̃_j` for every pair.
    pub prod: Vec<T>,
    /// Depthwise output, present with smoothing.
    pub dw: Option<Vec<T>>,
    /// Pair scores fed to the MLPs, gathered: self pairs and cross pairs.
    pub diag_in: Vec<T>,
    pub off_in: Vec<T>,
    pub mlp_s: MlpCache<T>,
    pub mlp_i: Option<MlpCache<T>>,
    pub alpha_diag: Vec<T>,
    pub alpha_off: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    pub heads: Vec<HeadCache<T>>,
    pub v_mix: Vec<T>,
    pub mlp_h: MlpCache<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct EmbedCache<T> {
    pub chan_in: Vec<T>,
    pub mf_in: Vec<T>,
    pub q: MlpCache<T>,
    pub k: Option<MlpCache<T>>,
    pub v: MlpCache<T>,
    /// Per-head slices of q and k, shared by every layer.
    pub q_slices: Vec<Vec<T>>,
    pub k_slices: Vec<Vec<T>>,
}

/// Everything computed by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub batch: usize,
    pub n_tx: usize,
    pub conv: ConvShape,
    pub(crate) embed: EmbedCache<T>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub state: TokenState<T>,
    pub(crate) llr: MlpCache<T>,
    /// Raw head outputs `[B·N_t x max_bits]` in slot order.
    pub logits: Vec<T>,
}

fn gather_cols<T: Scalar>(x: &[T], width: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len() / width * len);
    for row in x.chunks_exact(width) {
        out.extend_from_slice(&row[start..start + len]);
    }
    out
}

/// Validates a batch and builds the channel and matched-filter inputs.
fn prepare<T: Scalar>(obs: &[AttInput<'_, T>], n_rx: usize) -> Result<(usize, Vec<T>, Vec<T>)> {
    let first = obs.first().ok_or_else(|| Error::DimensionMismatch("empty batch".into()))?;
    let nt = first.h_est.cols();
    let width = 2 * n_rx;
    let mut chan = Vec::with_capacity(obs.len() * nt * width);
    let mut mf = Vec::with_capacity(obs.len() * nt * width);
    let eps = T::lit(DEGENERATE_COLUMN_EPS);
    for o in obs {
        let h = o.h_est;
        if h.rows() != n_rx || h.cols() != nt || o.y.len() != n_rx {
            return Err(Error::DimensionMismatch(format!(
                "model expects {n_rx} receive antennas and a uniform layer count; got {}x{} channel with {} samples",
                h.rows(),
                h.cols(),
                o.y.len()
            )));
        }
        for i in 0..nt {
            let col = h.column(i);
            let energy: T = col.iter().map(|z| z.norm_sqr()).sum();
            if !(energy > eps) {
                return Err(Error::DegenerateColumn { column: i, norm_sqr: energy.as_f64() });
            }
            chan.extend(phi(&col));
            let u: Vec<Complex<T>> = col.iter().zip(o.y).map(|(hc, yc)| hc.conj() * yc / energy).collect();
            mf.extend(phi(&u));
        }
    }
    Ok((nt, chan, mf))
}

fn embed<T: Scalar>(params: &ModelParams<T>, obs: &[AttInput<'_, T>]) -> Result<(TokenState<T>, EmbedCache<T>)> {
    let layout = params.layout();
    let p = params.flat();
    let (nt, chan_in, mf_in) = prepare(obs, layout.n_rx)?;
    let (q, q_cache) = mlp_forward(p, &layout.mlp_q, &chan_in);
    let (k, k_cache) = if params.arch().share_qk {
        (q.clone(), None)
    } else {
        let (k, c) = mlp_forward(p, &layout.mlp_k, &chan_in);
        (k, Some(c))
    };
    let (v, v_cache) = mlp_forward(p, &layout.mlp_v, &mf_in);
    let (d, dh) = (layout.d, layout.d_head);
    let q_slices = (0..layout.n_heads).map(|h| gather_cols(&q, d, h * dh, dh)).collect();
    let k_slices = (0..layout.n_heads).map(|h| gather_cols(&k, d, h * dh, dh)).collect();
    let state = TokenState { batch: obs.len(), n_tx: nt, d, q, k, v };
    Ok((state, EmbedCache { chan_in, mf_in, q: q_cache, k: k_cache, v: v_cache, q_slices, k_slices }))
}

pub fn embed_tokens<T: Scalar>(params: &ModelParams<T>, obs: &[AttInput<'_, T>]) -> Result<TokenState<T>> {
    Ok(embed(params, obs)?.0)
}

fn conv_shape(batch: usize, nt: usize, dh: usize, grid: Option<GridShape>) -> Result<ConvShape> {
    let g = grid.unwrap_or_else(GridShape::single);
    if g.size() == 0 || !batch.is_multiple_of(g.size()) {
        return Err(Error::DimensionMismatch(format!(
            "batch of {batch} REs does not tile {}x{} frames",
            g.rows, g.cols
        )));
    }
    Ok(ConvShape { frames: batch / g.size(), rows: g.rows, cols: g.cols, groups: nt * nt, channels: dh })
}

fn attention_block<T: Scalar>(
    params: &ModelParams<T>,
    block: &BlockShape,
    embed: &EmbedCache<T>,
    state: &TokenState<T>,
    conv: &ConvShape,
) -> (Vec<T>, LayerCache<T>) {
    let p = params.flat();
    let arch: &ArchConfig = params.arch();
    let (d, nt, batch) = (state.d, state.n_tx, state.batch);
    let dh = params.layout().d_head;
    let rows = batch * nt;
    let mut v_mix = vec![T::zero(); rows * d];
    let mut heads = Vec::with_capacity(block.heads.len());
    for (h, hs) in block.heads.iter().enumerate() {
        let v_slice = gather_cols(&state.v, d, h * dh, dh);
        let mut qt = vec![T::zero(); rows * dh];
        let mut kt = vec![T::zero(); rows * dh];
        let mut vt = vec![T::zero(); rows * dh];
        affine(&embed.q_slices[h], dh, &p[hs.proj_q..hs.proj_q + dh * dh], None, dh, &mut qt);
        affine(&embed.k_slices[h], dh, &p[hs.proj_k..hs.proj_k + dh * dh], None, dh, &mut kt);
        affine(&v_slice, dh, &p[hs.proj_v..hs.proj_v + dh * dh], None, dh, &mut vt);

        let mut prod = vec![T::zero(); rows * nt * dh];
        for b in 0..batch {
            for i in 0..nt {
                let qi = &qt[(b * nt + i) * dh..(b * nt + i + 1) * dh];
                for j in 0..nt {
                    let kj = &kt[(b * nt + j) * dh..(b * nt + j + 1) * dh];
                    let row = ((b * nt + i) * nt + j) * dh;
                    for ((o, &a), &c) in prod[row..row + dh].iter_mut().zip(qi).zip(kj) {
                        *o = a * c;
                    }
                }
            }
        }

        let (dw, scores) = match (hs.depthwise, hs.pointwise) {
            (Some(dwo), Some(pwo)) if arch.score_smoothing => {
                let dw = depthwise_forward(&prod, &p[dwo..dwo + 9 * dh], conv);
                let mut s = vec![T::zero(); dw.len()];
                affine(&dw, dh, &p[pwo..pwo + dh * dh], None, dh, &mut s);
                (Some(dw), Some(s))
            }
            _ => (None, None),
        };
        let scores_ref = scores.as_deref().unwrap_or(&prod);

        let mut diag_in = Vec::with_capacity(rows * dh);
        let mut off_in = Vec::with_capacity(rows * (nt - 1) * dh);
        for b in 0..batch {
            for i in 0..nt {
                for j in 0..nt {
                    let row = ((b * nt + i) * nt + j) * dh;
                    let src = &scores_ref[row..row + dh];
                    if i == j {
                        diag_in.extend_from_slice(src);
                    } else {
                        off_in.extend_from_slice(src);
                    }
                }
            }
        }
        let (alpha_diag, mlp_s) = mlp_forward(p, &hs.mlp_s, &diag_in);
        let (alpha_off, mlp_i) = if nt > 1 {
            let (a, c) = mlp_forward(p, &hs.mlp_i, &off_in);
            (a, Some(c))
        } else {
            (Vec::new(), None)
        };

        // Terms are summed in sorted order so that the result does not depend
        // on the token order, bit for bit.
        let mut terms = vec![T::zero(); nt * dh];
        let mut col = vec![T::zero(); nt];
        for b in 0..batch {
            for i in 0..nt {
                let mut jj = 0;
                for j in 0..nt {
                    let alpha = if i == j {
                        &alpha_diag[(b * nt + i) * dh..(b * nt + i + 1) * dh]
                    } else {
                        let r = ((b * nt + i) * (nt - 1) + jj) * dh;
                        jj += 1;
                        &alpha_off[r..r + dh]
                    };
                    let vj = &vt[(b * nt + j) * dh..(b * nt + j + 1) * dh];
                    for ((t, &a), &v) in terms[j * dh..(j + 1) * dh].iter_mut().zip(alpha).zip(vj) {
                        *t = a * v;
                    }
                }
                let out_row = (b * nt + i) * d + h * dh;
                for c in 0..dh {
                    for (j, x) in col.iter_mut().enumerate() {
                        *x = terms[j * dh + c];
                    }
                    if nt > 2 {
                        col.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
                    }
                    v_mix[out_row + c] = col.iter().fold(T::zero(), |s, &x| s + x);
                }
            }
        }
        heads.push(HeadCache { v_slice, qt, kt, vt, prod, dw, diag_in, off_in, mlp_s, mlp_i, alpha_diag, alpha_off });
    }
    let (mut v_out, mlp_h) = mlp_forward(p, &block.mlp_h, &v_mix);
    if arch.residual {
        for (o, &vi) in v_out.iter_mut().zip(&state.v) {
            *o += vi;
        }
    }
    (v_out, LayerCache { heads, v_mix, mlp_h })
}

/// One attention layer applied to `state` (layer index `layer`).
pub fn attention_layer<T: Scalar>(
    params: &ModelParams<T>,
    layer: usize,
    state: &TokenState<T>,
    grid: Option<GridShape>,
) -> Result<TokenState<T>> {
    let layout = params.layout();
    let block = layout
        .blocks
        .get(layer)
        .ok_or_else(|| Error::Config(format!("model has {} layers, asked for {layer}", layout.blocks.len())))?;
    let (d, dh) = (layout.d, layout.d_head);
    let embed = EmbedCache {
        chan_in: Vec::new(),
        mf_in: Vec::new(),
        q: MlpCache { hidden: Vec::new() },
        k: None,
        v: MlpCache { hidden: Vec::new() },
        q_slices: (0..layout.n_heads).map(|h| gather_cols(&state.q, d, h * dh, dh)).collect(),
        k_slices: (0..layout.n_heads).map(|h| gather_cols(&state.k, d, h * dh, dh)).collect(),
    };
    let conv = conv_shape(state.batch, state.n_tx, dh, grid)?;
    let (v, _) = attention_block(params, block, &embed, state, &conv);
    Ok(TokenState { v, ..state.clone() })
}

/// Full forward pass keeping all intermediates.
pub fn forward_trace<T: Scalar>(
    params: &ModelParams<T>,
    obs: &[AttInput<'_, T>],
    grid: Option<GridShape>,
) -> Result<Trace<T>> {
    let (mut state, embed_cache) = embed(params, obs)?;
    let layout = params.layout();
    let conv = conv_shape(state.batch, state.n_tx, layout.d_head, grid)?;
    let mut layers = Vec::with_capacity(layout.blocks.len());
    for block in &layout.blocks {
        let (v, cache) = attention_block(params, block, &embed_cache, &state, &conv);
        state.v = v;
        layers.push(cache);
    }
    let (logits, llr) = mlp_forward(params.flat(), &layout.mlp_llr, &state.v);
    Ok(Trace { batch: state.batch, n_tx: state.n_tx, conv, embed: embed_cache, layers, state, llr, logits })
}

impl<T: Scalar> Trace<T> {
    /// Which ReLU units are active, over every MLP of the pass.
    pub(crate) fn activation_pattern(&self) -> Vec<bool> {
        let e = &self.embed;
        let mut caches: Vec<&MlpCache<T>> = vec![&e.q, &e.v];
        caches.extend(e.k.as_ref());
        for l in &self.layers {
            for h in &l.heads {
                caches.push(&h.mlp_s);
                caches.extend(h.mlp_i.as_ref());
            }
            caches.push(&l.mlp_h);
        }
        caches.push(&self.llr);
        caches.iter().flat_map(|c| c.hidden.iter().map(|&x| x > T::zero())).collect()
    }

    /// Masked logits of RE `b`, reordered into label bit order, one vector
    /// per layer.
    pub fn layer_logits(&self, b: usize, bits_per_symbol: usize, max_bits: usize) -> Vec<Vec<T>> {
        (0..self.n_tx)
            .map(|i| {
                let row = &self.logits[(b * self.n_tx + i) * max_bits..(b * self.n_tx + i + 1) * max_bits];
                let mut out = vec![T::zero(); bits_per_symbol];
                for (slot, &l) in row.iter().take(bits_per_symbol).enumerate() {
                    out[logit_slot_to_bit(slot, bits_per_symbol)] = l;
                }
                out
            })
            .collect()
    }
}

fn check_bits(params: &ModelParams<impl Scalar>, bits_per_symbol: usize) -> Result<()> {
    if bits_per_symbol > params.arch().max_bits || !bits_per_symbol.is_multiple_of(2) || bits_per_symbol == 0 {
        return Err(Error::Config(format!(
            "model supports up to {} bits per symbol, asked for {bits_per_symbol}",
            params.arch().max_bits
        )));
    }
    Ok(())
}

/// Per-RE, per-layer LLRs (label bit order) for a batch.
pub fn forward_batch<T: Scalar>(
    params: &ModelParams<T>,
    obs: &[AttInput<'_, T>],
    grid: Option<GridShape>,
    bits_per_symbol: usize,
) -> Result<Vec<Vec<Vec<T>>>> {
    check_bits(params, bits_per_symbol)?;
    let trace = forward_trace(params, obs, grid)?;
    let max_bits = params.arch().max_bits;
    let clip = T::lit(1e6);
    let out: Vec<Vec<Vec<T>>> = (0..trace.batch)
        .map(|b| {
            trace
                .layer_logits(b, bits_per_symbol, max_bits)
                .into_iter()
                .map(|v| v.into_iter().map(|l| clip_llr(l, clip)).collect())
                .collect()
        })
        .collect();
    if out.iter().flatten().flatten().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("attention detector forward pass"));
    }
    Ok(out)
}

/// Logits of a single RE: `N_t` vectors of `bits_per_symbol` LLRs.
pub fn forward<T: Scalar>(
    h_est: &ComplexMatrix<T>,
    y: &[Complex<T>],
    params: &ModelParams<T>,
    bits_per_symbol: usize,
) -> Result<Vec<Vec<T>>> {
    let mut out = forward_batch(params, &[AttInput { h_est, y }], None, bits_per_symbol)?;
    Ok(out.pop().expect("one RE in, one out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attdet::{init_params, ParamLayout};
    use crate::channel::{sample_channel, ChannelConfig};
    use crate::rng::{complex_normal, seeded, SimRng};

    fn random_re(n_rx: usize, n_tx: usize, rng: &mut SimRng) -> (ComplexMatrix<f64>, Vec<Complex<f64>>) {
        let h = sample_channel(&ChannelConfig::iid(n_rx, n_tx), rng).unwrap();
        let y = (0..n_rx).map(|_| complex_normal(rng, 1.0)).collect();
        (h, y)
    }

    fn arch(d: usize, heads: usize, layers: usize) -> ArchConfig {
        ArchConfig { d, n_heads: heads, n_layers: layers, max_bits: 4, ..ArchConfig::default() }
    }

    #[test]
    fn phi_layout() {
        let v = [Complex::new(1.0, 2.0), Complex::new(3.0, -1.0)];
        assert_eq!(phi(&v), vec![1.0, 3.0, 2.0, -1.0]);
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let p2: f64 = phi(&v).iter().map(|x| x * x).sum();
        assert_eq!(n2, p2);
    }

    #[test]
    fn default_parameter_count() {
        let layout = ParamLayout::new(&ArchConfig::default(), 8).unwrap();
        // Two-layer MLP sizes walked shape by shape.
        let mlp = |i: usize, h: usize, o: usize| i * h + h + h * o + o;
        let (d, dh, nr) = (64, 16, 8);
        let head = 3 * dh * dh + 2 * mlp(dh, 4 * dh, dh);
        let layer = 4 * head + mlp(d, 4 * d, d);
        let walked = 3 * mlp(2 * nr, d, d) + 4 * layer + mlp(d, 2 * d, 6);
        assert_eq!(walked, 237_574);
        assert_eq!(layout.total, walked);
        let tensor_sum: usize = layout.tensors().iter().map(|t| t.len).sum();
        assert_eq!(tensor_sum, layout.total);
    }

    #[test]
    fn sharing_shrinks_layout() {
        let base = ParamLayout::new(&ArchConfig::default(), 8).unwrap().total;
        let qk = ParamLayout::new(&ArchConfig { share_qk: true, ..ArchConfig::default() }, 8).unwrap();
        assert_eq!(base - qk.total, 5248);
        assert_eq!(qk.mlp_q, qk.mlp_k);
        let tied = ParamLayout::new(&ArchConfig { share_layer_params: true, ..ArchConfig::default() }, 8).unwrap();
        assert_eq!(base - tied.total, 3 * 53_184);
        assert!(tied.blocks.iter().all(|b| *b == tied.blocks[0]));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a: ModelParams<f64> = init_params(&ArchConfig::default(), 8, &mut seeded(5)).unwrap();
        let b: ModelParams<f64> = init_params(&ArchConfig::default(), 8, &mut seeded(5)).unwrap();
        assert_eq!(a.flat(), b.flat());
        for t in a.layout().tensors() {
            let vals = a.tensor(t);
            match t.kind {
                crate::attdet::TensorKind::Bias => assert!(vals.iter().all(|&v| v == 0.0), "{}", t.name),
                crate::attdet::TensorKind::Weight { fan_in, fan_out } => {
                    let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    assert!(vals.iter().all(|v| v.abs() <= lim));
                }
                _ => {}
            }
        }
    }

    #[test]
    fn shapes_across_layer_counts() {
        let p: ModelParams<f64> = init_params(&arch(16, 2, 2), 4, &mut seeded(1)).unwrap();
        let mut rng = seeded(2);
        for nt in 1..=4 {
            let (h, y) = random_re(4, nt, &mut rng);
            for bps in [2, 4] {
                let out = forward(&h, &y, &p, bps).unwrap();
                assert_eq!(out.len(), nt);
                assert!(out.iter().all(|l| l.len() == bps));
            }
        }
        let (h, y) = random_re(4, 2, &mut rng);
        assert!(forward(&h, &y, &p, 6).is_err());
    }

    #[test]
    fn forward_is_pure_and_batch_consistent() {
        let p: ModelParams<f64> = init_params(&arch(16, 4, 2), 4, &mut seeded(3)).unwrap();
        let mut rng = seeded(4);
        let res: Vec<_> = (0..5).map(|_| random_re(4, 2, &mut rng)).collect();
        let single: Vec<_> = res.iter().map(|(h, y)| forward(h, y, &p, 4).unwrap()).collect();
        let again: Vec<_> = res.iter().map(|(h, y)| forward(h, y, &p, 4).unwrap()).collect();
        assert_eq!(single, again);
        let inputs: Vec<_> = res.iter().map(|(h, y)| AttInput { h_est: h, y }).collect();
        assert_eq!(forward_batch(&p, &inputs, None, 4).unwrap(), single);
    }

    #[test]
    fn shared_qk_gives_equal_queries_and_keys() {
        let a = ArchConfig { share_qk: true, ..arch(8, 2, 1) };
        let p: ModelParams<f64> = init_params(&a, 3, &mut seeded(6)).unwrap();
        let (h, y) = random_re(3, 2, &mut seeded(7));
        let s = embed_tokens(&p, &[AttInput { h_est: &h, y: &y }]).unwrap();
        assert_eq!(s.q, s.k);
        let p2: ModelParams<f64> = init_params(&arch(8, 2, 1), 3, &mut seeded(6)).unwrap();
        let s2 = embed_tokens(&p2, &[AttInput { h_est: &h, y: &y }]).unwrap();
        assert_ne!(s2.q, s2.k);
    }

    #[test]
    fn matched_filter_inputs() {
        let s = Complex::new(0.3, -0.7);
        let h = ComplexMatrix::new(1, 1, vec![Complex::new(1.0, 0.0)]).unwrap();
        let (_, _, mf) = prepare(&[AttInput { h_est: &h, y: &[s] }], 1).unwrap();
        assert_eq!(mf, vec![0.3, -0.7]);

        // Equal-magnitude column: elementwise products sum to hᴴy/‖h‖².
        let col = [Complex::new(0.6, 0.8), Complex::new(-1.0, 0.0), Complex::new(0.0, 1.0)];
        let h = ComplexMatrix::new(3, 1, col.to_vec()).unwrap();
        let y = [Complex::new(0.2, 0.1), Complex::new(-0.5, 0.4), Complex::new(1.0, 1.0)];
        let (_, _, mf) = prepare(&[AttInput { h_est: &h, y: &y }], 3).unwrap();
        let sum = Complex::new(mf[0] + mf[1] + mf[2], mf[3] + mf[4] + mf[5]);
        let classical = col.iter().zip(&y).map(|(a, b)| a.conj() * b).sum::<Complex<f64>>() / 3.0;
        assert!((sum - classical).norm() < 1e-15);
    }

    #[test]
    fn degenerate_column_is_rejected() {
        let p: ModelParams<f64> = init_params(&arch(8, 2, 1), 2, &mut seeded(8)).unwrap();
        let mut h = ComplexMatrix::from_fn(2, 2, |_, _| Complex::new(1.0, 0.5));
        h.set(0, 1, Complex::new(0.0, 0.0));
        h.set(1, 1, Complex::new(1e-7, 0.0));
        let y = [Complex::new(1.0, 0.0); 2];
        assert!(matches!(forward(&h, &y, &p, 2), Err(Error::DegenerateColumn { column: 1, .. })));
    }

    #[test]
    fn single_token_ignores_interference_mlp() {
        let p: ModelParams<f64> = init_params(&arch(8, 2, 2), 4, &mut seeded(9)).unwrap();
        let mut zeroed = p.clone();
        for block in p.layout().blocks.clone() {
            for head in &block.heads {
                let r = head.mlp_i.offset..head.mlp_i.offset + head.mlp_i.len();
                zeroed.flat_mut()[r].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (h, y) = random_re(4, 1, &mut seeded(10));
        assert_eq!(forward(&h, &y, &p, 4).unwrap(), forward(&h, &y, &zeroed, 4).unwrap());
        let (h2, y2) = random_re(4, 2, &mut seeded(10));
        assert_ne!(forward(&h2, &y2, &p, 4).unwrap(), forward(&h2, &y2, &zeroed, 4).unwrap());
    }

    #[test]
    fn residual_passthrough_with_zero_head_mlp() {
        let mut p: ModelParams<f64> = init_params(&arch(8, 2, 1), 3, &mut seeded(11)).unwrap();
        let m = p.layout().blocks[0].mlp_h;
        for r in [m.w2(), m.b2()] {
            p.flat_mut()[r].iter_mut().for_each(|v| *v = 0.0);
        }
        let (h, y) = random_re(3, 3, &mut seeded(12));
        let s = embed_tokens(&p, &[AttInput { h_est: &h, y: &y }]).unwrap();
        assert_eq!(attention_layer(&p, 0, &s, None).unwrap(), s);
    }

    fn permutation_case(a: ArchConfig, nt: usize, perm: &[usize], seed: u64) {
        let p: ModelParams<f64> = init_params(&a, 4, &mut seeded(seed)).unwrap();
        let mut rng = seeded(seed + 1);
        let res: Vec<_> = (0..4).map(|_| random_re(4, nt, &mut rng)).collect();
        let permuted: Vec<_> = res.iter().map(|(h, y)| (h.select_columns(perm), y.clone())).collect();
        let grid = a.score_smoothing.then_some(GridShape { rows: 2, cols: 2 });
        let run = |set: &[(ComplexMatrix<f64>, Vec<Complex<f64>>)]| {
            let inputs: Vec<_> = set.iter().map(|(h, y)| AttInput { h_est: h, y }).collect();
            forward_batch(&p, &inputs, grid, 4).unwrap()
        };
        let base = run(&res);
        let out = run(&permuted);
        for (b, p2) in base.iter().zip(&out) {
            for (k, &src) in perm.iter().enumerate() {
                assert_eq!(p2[k], b[src]);
            }
        }
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        permutation_case(arch(16, 2, 2), 2, &[1, 0], 20);
        permutation_case(arch(16, 4, 3), 3, &[2, 0, 1], 21);
        permutation_case(arch(8, 2, 2), 4, &[3, 1, 0, 2], 22);
        permutation_case(ArchConfig { score_smoothing: true, ..arch(8, 2, 2) }, 3, &[1, 2, 0], 23);
        permutation_case(ArchConfig { residual: false, share_qk: true, ..arch(8, 1, 2) }, 3, &[2, 1, 0], 24);
    }

    #[test]
    fn smoothing_identity_init_matches_unsmoothed() {
        let a = arch(8, 2, 2);
        let plain: ModelParams<f64> = init_params(&a, 4, &mut seeded(30)).unwrap();
        let sa = ArchConfig { score_smoothing: true, ..a };
        let mut smooth = ModelParams::<f64>::zeros(&sa, 4).unwrap();
        // Copy the shared tensors by name; smoothing tensors keep their identity init.
        let fresh: ModelParams<f64> = init_params(&sa, 4, &mut seeded(0)).unwrap();
        smooth.flat_mut().copy_from_slice(fresh.flat());
        for t in plain.layout().tensors() {
            let dst = smooth.layout().tensors().iter().find(|s| s.name == t.name).unwrap().clone();
            smooth.flat_mut()[dst.offset..dst.offset + dst.len].copy_from_slice(plain.tensor(t));
        }
        let mut rng = seeded(31);
        let res: Vec<_> = (0..6).map(|_| random_re(4, 2, &mut rng)).collect();
        let inputs: Vec<_> = res.iter().map(|(h, y)| AttInput { h_est: h, y }).collect();
        let x = forward_batch(&plain, &inputs, None, 4).unwrap();
        let y = forward_batch(&smooth, &inputs, Some(GridShape { rows: 2, cols: 3 }), 4).unwrap();
        for (a, b) in x.iter().flatten().flatten().zip(y.iter().flatten().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(forward_batch(&smooth, &inputs, Some(GridShape { rows: 4, cols: 1 }), 4).is_err());
    }

    #[test]
    fn bounded_inputs_stay_finite() {
        let p: ModelParams<f64> = init_params(&ArchConfig::default(), 8, &mut seeded(40)).unwrap();
        let mut rng = seeded(41);
        for scale in [1e-3, 1.0, 30.0] {
            let (h, y) = random_re(8, 2, &mut rng);
            let h = h.scale(scale);
            let hn = h.frobenius_norm();
            let h = if hn > 100.0 { h.scale(100.0 / hn) } else { h };
            let y: Vec<_> = y.iter().map(|v| v * scale).collect();
            let trace = forward_trace(&p, &[AttInput { h_est: &h, y: &y }], None).unwrap();
            assert!(trace.logits.iter().chain(&trace.state.v).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn slot_mapping_puts_sign_bits_first() {
        assert_eq!((0..2).map(|s| logit_slot_to_bit(s, 2)).collect::<Vec<_>>(), [0, 1]);
        assert_eq!((0..4).map(|s| logit_slot_to_bit(s, 4)).collect::<Vec<_>>(), [0, 2, 1, 3]);
        assert_eq!((0..6).map(|s| logit_slot_to_bit(s, 6)).collect::<Vec<_>>(), [0, 3, 1, 4, 2, 5]);
    }
}
