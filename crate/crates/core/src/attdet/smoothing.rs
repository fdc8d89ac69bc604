//! Depthwise-separable 3x3 smoothing over a grid of resource elements.
//!
//! Data layout is `[frame][row][col][group][channel]`: every RE of a
//! `rows x cols` frame holds `groups` independent score vectors (one per
//! token pair) of `channels` features. The depthwise kernel is shared across
//! groups, has one 3x3 filter per channel and zero padding at the frame
//! border; the pointwise step mixes channels with a `channels x channels`
//! matrix.

use super::kernels::affine;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub groups: usize,
    pub channels: usize,
}

impl ConvShape {
    #[inline]
    fn re_stride(&self) -> usize {
        self.groups * self.channels
    }

    pub fn len(&self) -> usize {
        self.frames * self.rows * self.cols * self.re_stride()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits `(out_base, in_base, tap)` for every valid (output RE, input RE)
    /// pair; bases index the first element of an RE.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let stride = self.re_stride();
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        for frame in 0..self.frames {
            let base = frame * self.rows * self.cols;
            for r in 0..rows {
                for c in 0..cols {
                    let out_re = base + (r * cols + c) as usize;
                    for dr in -1isize..=1 {
                        for dc in -1isize..=1 {
                            let (rr, cc) = (r + dr, c + dc);
                            if rr < 0 || rr >= rows || cc < 0 || cc >= cols {
                                continue;
                            }
                            let in_re = base + (rr * cols + cc) as usize;
                            let tap = ((dr + 1) * 3 + (dc + 1)) as usize;
                            f(out_re * stride, in_re * stride, tap);
                        }
                    }
                }
            }
        }
    }
}

/// Kernel `[channel][tap]` reorganized as `[tap][channel]`.
fn taps_major<T: Scalar>(kernel: &[T], channels: usize) -> Vec<T> {
    let mut t = vec![T::zero(); 9 * channels];
    for ch in 0..channels {
        for tap in 0..9 {
            t[tap * channels + ch] = kernel[ch * 9 + tap];
        }
    }
    t
}

pub(crate) fn depthwise_forward<T: Scalar>(input: &[T], kernel: &[T], shape: &ConvShape) -> Vec<T> {
    let ch = shape.channels;
    let kt = taps_major(kernel, ch);
    let mut out = vec![T::zero(); input.len()];
    shape.for_each_tap(|ob, ib, tap| {
        let k = &kt[tap * ch..(tap + 1) * ch];
        for g in 0..shape.groups {
            let o = &mut out[ob + g * ch..ob + (g + 1) * ch];
            let x = &input[ib + g * ch..ib + (g + 1) * ch];
            for ((oi, &xi), &ki) in o.iter_mut().zip(x).zip(k) {
                *oi += ki * xi;
            }
        }
    });
    out
}

/// Accumulates the kernel gradient and returns the input gradient.
pub(crate) fn depthwise_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    d_out: &[T],
    shape: &ConvShape,
    d_kernel: &mut [T],
) -> Vec<T> {
    let ch = shape.channels;
    let kt = taps_major(kernel, ch);
    let mut dk_t = vec![T::zero(); 9 * ch];
    let mut d_in = vec![T::zero(); input.len()];
    shape.for_each_tap(|ob, ib, tap| {
        let k = &kt[tap * ch..(tap + 1) * ch];
        let dk = &mut dk_t[tap * ch..(tap + 1) * ch];
        for g in 0..shape.groups {
            let go = &d_out[ob + g * ch..ob + (g + 1) * ch];
            let x = &input[ib + g * ch..ib + (g + 1) * ch];
            let gi = &mut d_in[ib + g * ch..ib + (g + 1) * ch];
            for c in 0..ch {
                dk[c] += go[c] * x[c];
                gi[c] += k[c] * go[c];
            }
        }
    });
    for c in 0..ch {
        for tap in 0..9 {
            d_kernel[c * 9 + tap] += dk_t[tap * ch + c];
        }
    }
    d_in
}

/// Depthwise 3x3 convolution followed by the pointwise channel mix
/// `out[o] = Σ_c s[c] · pointwise[c][o]`.
pub fn smooth_scores<T: Scalar>(grid: &[T], shape: &ConvShape, depthwise: &[T], pointwise: &[T]) -> Vec<T> {
    assert_eq!(grid.len(), shape.len(), "grid does not match conv shape");
    assert_eq!(depthwise.len(), 9 * shape.channels);
    assert_eq!(pointwise.len(), shape.channels * shape.channels);
    let dw = depthwise_forward(grid, depthwise, shape);
    let mut out = vec![T::zero(); dw.len()];
    affine(&dw, shape.channels, pointwise, None, shape.channels, &mut out);
    out
}
