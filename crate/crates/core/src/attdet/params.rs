//! Parameter layout of the attention detector.
//!
//! Every learnable tensor lives in one flat vector; [`ParamLayout`] records
//! where each tensor starts. Gradients use the same layout, so the optimizer
//! and the finite-difference checker only ever see flat vectors. Shared
//! tensors (tied query/key embedding, tied attention blocks) are represented
//! by repeating the same offsets, which makes gradient accumulation implicit.

use rand::{Rng, RngExt};

use super::ArchConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two-layer perceptron `x → ReLU(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub offset: usize,
}

impl MlpShape {
    pub fn len(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    #[inline]
    pub fn w1(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.input * self.hidden
    }

    #[inline]
    pub fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }

    #[inline]
    pub fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden * self.output
    }

    #[inline]
    pub fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadShape {
    /// Offsets of the bias-free `d_h x d_h` projections.
    pub proj_q: usize,
    pub proj_k: usize,
    pub proj_v: usize,
    pub mlp_i: MlpShape,
    pub mlp_s: MlpShape,
    /// Depthwise `d_h x 9` kernel (row per channel, taps row-major over 3x3).
    pub depthwise: Option<usize>,
    /// Pointwise `d_h x d_h` channel mix.
    pub pointwise: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockShape {
    pub heads: Vec<HeadShape>,
    pub mlp_h: MlpShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight {
        fan_in: usize,
        fan_out: usize,
    },
    Bias,
    /// Square matrix initialized to the identity.
    Identity,
    /// Depthwise 3x3 kernels initialized to a unit center tap.
    CenterTap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub d: usize,
    pub d_head: usize,
    pub n_heads: usize,
    pub n_rx: usize,
    pub max_bits: usize,
    pub mlp_q: MlpShape,
    pub mlp_k: MlpShape,
    pub mlp_v: MlpShape,
    /// One entry per attention layer; tied layers share offsets.
    pub blocks: Vec<BlockShape>,
    pub mlp_llr: MlpShape,
    pub total: usize,
    tensors: Vec<TensorSpec>,
}

struct Builder {
    offset: usize,
    tensors: Vec<TensorSpec>,
}

impl Builder {
    fn tensor(&mut self, name: String, len: usize, kind: TensorKind) -> usize {
        let offset = self.offset;
        self.tensors.push(TensorSpec { name, offset, len, kind });
        self.offset += len;
        offset
    }

    fn mlp(&mut self, name: &str, input: usize, hidden: usize, output: usize) -> MlpShape {
        let offset = self.offset;
        self.tensor(format!("{name}.w1"), input * hidden, TensorKind::Weight { fan_in: input, fan_out: hidden });
        self.tensor(format!("{name}.b1"), hidden, TensorKind::Bias);
        self.tensor(format!("{name}.w2"), hidden * output, TensorKind::Weight { fan_in: hidden, fan_out: output });
        self.tensor(format!("{name}.b2"), output, TensorKind::Bias);
        MlpShape { input, hidden, output, offset }
    }
}

impl ParamLayout {
    pub fn new(arch: &ArchConfig, n_rx: usize) -> Result<Self> {
        arch.validate()?;
        if n_rx == 0 {
            return Err(Error::Config("n_rx must be positive".into()));
        }
        let d = arch.d;
        let dh = d / arch.n_heads;
        let mut b = Builder { offset: 0, tensors: Vec::new() };
        let mlp_q = b.mlp("embed_q", 2 * n_rx, d, d);
        let mlp_k = if arch.share_qk { mlp_q } else { b.mlp("embed_k", 2 * n_rx, d, d) };
        let mlp_v = b.mlp("embed_v", 2 * n_rx, d, d);
        let unique_blocks = if arch.share_layer_params { 1 } else { arch.n_layers };
        let mut blocks = Vec::with_capacity(arch.n_layers);
        for t in 0..unique_blocks {
            let heads = (0..arch.n_heads)
                .map(|h| {
                    let p = format!("layer{t}.head{h}");
                    let proj_q =
                        b.tensor(format!("{p}.proj_q"), dh * dh, TensorKind::Weight { fan_in: dh, fan_out: dh });
                    let proj_k =
                        b.tensor(format!("{p}.proj_k"), dh * dh, TensorKind::Weight { fan_in: dh, fan_out: dh });
                    let proj_v =
                        b.tensor(format!("{p}.proj_v"), dh * dh, TensorKind::Weight { fan_in: dh, fan_out: dh });
                    let mlp_i = b.mlp(&format!("{p}.mlp_i"), dh, 4 * dh, dh);
                    let mlp_s = b.mlp(&format!("{p}.mlp_s"), dh, 4 * dh, dh);
                    let (depthwise, pointwise) = if arch.score_smoothing {
                        (
                            Some(b.tensor(format!("{p}.depthwise"), dh * 9, TensorKind::CenterTap)),
                            Some(b.tensor(format!("{p}.pointwise"), dh * dh, TensorKind::Identity)),
                        )
                    } else {
                        (None, None)
                    };
                    HeadShape { proj_q, proj_k, proj_v, mlp_i, mlp_s, depthwise, pointwise }
                })
                .collect();
            let mlp_h = b.mlp(&format!("layer{t}.mlp_h"), d, 4 * d, d);
            blocks.push(BlockShape { heads, mlp_h });
        }
        while blocks.len() < arch.n_layers {
            blocks.push(blocks[0].clone());
        }
        let mlp_llr = b.mlp("llr", d, 2 * d, arch.max_bits);
        Ok(Self {
            d,
            d_head: dh,
            n_heads: arch.n_heads,
            n_rx,
            max_bits: arch.max_bits,
            mlp_q,
            mlp_k,
            mlp_v,
            blocks,
            mlp_llr,
            total: b.offset,
            tensors: b.tensors,
        })
    }

    /// Distinct tensors in flattening order.
    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }
}

/// All learnable tensors of one model, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: ArchConfig,
    layout: ParamLayout,
    values: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(arch: &ArchConfig, n_rx: usize) -> Result<Self> {
        let layout = ParamLayout::new(arch, n_rx)?;
        let values = vec![T::zero(); layout.total];
        Ok(Self { arch: arch.clone(), layout, values })
    }

    pub fn from_flat(arch: &ArchConfig, n_rx: usize, values: Vec<T>) -> Result<Self> {
        let layout = ParamLayout::new(arch, n_rx)?;
        if values.len() != layout.total {
            return Err(Error::CheckpointMismatch(format!(
                "architecture needs {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        Ok(Self { arch: arch.clone(), layout, values })
    }

    #[inline]
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    #[inline]
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    #[inline]
    pub fn n_rx(&self) -> usize {
        self.layout.n_rx
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn flat(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<T> {
        self.values
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn tensor(&self, spec: &TensorSpec) -> &[T] {
        &self.values[spec.offset..spec.offset + spec.len]
    }
}

/// Glorot-uniform weights, zero biases, identity smoothing kernels.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(arch: &ArchConfig, n_rx: usize, rng: &mut R) -> Result<ModelParams<T>> {
    let mut params = ModelParams::zeros(arch, n_rx)?;
    let specs = params.layout.tensors.clone();
    for spec in &specs {
        let slot = &mut params.values[spec.offset..spec.offset + spec.len];
        match spec.kind {
            TensorKind::Weight { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in slot.iter_mut() {
                    *v = T::lit(rng.random_range(-limit..limit));
                }
            }
            TensorKind::Bias => {}
            TensorKind::Identity => {
                let n = (spec.len as f64).sqrt() as usize;
                for i in 0..n {
                    slot[i * n + i] = T::one();
                }
            }
            TensorKind::CenterTap => {
                for ch in slot.chunks_exact_mut(9) {
                    ch[4] = T::one();
                }
            }
        }
    }
    Ok(params)
}
