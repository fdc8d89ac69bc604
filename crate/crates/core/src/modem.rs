//! Square Gray-labeled QAM and max-log soft demapping.
//!
//! Labels are stored as integers, most significant bit first: the first
//! `bits_per_axis` bits index the in-phase level, the remaining bits the
//! quadrature level, each with a reflected Gray code. An LLR is
//! `log(P(b=1)/P(b=0))`, so positive values favor a one.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LLR_CLIP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation<T> {
    order: usize,
    bits_per_symbol: usize,
    /// Per-axis amplitudes in ascending order, already normalized.
    levels: Vec<T>,
    points: Vec<Complex<T>>,
    labels: Vec<u32>,
    /// `point_of_label[label]` is the index into `points`.
    point_of_label: Vec<usize>,
}

/// Per-bit soft values for one symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBits<T> {
    pub llrs: Vec<T>,
}

#[inline]
fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

impl<T: Scalar> Constellation<T> {
    pub fn new(order: usize) -> Result<Self> {
        let bits_per_axis = match order {
            4 => 1,
            16 => 2,
            64 => 3,
            _ => return Err(Error::UnsupportedOrder(order)),
        };
        let side = 1usize << bits_per_axis;
        // mean of (2a - side + 1)^2 over one axis is (side^2 - 1)/3; two axes
        let norm = (T::lit(2.0) * T::lit(((side * side - 1) as f64) / 3.0)).sqrt();
        let levels: Vec<T> = (0..side).map(|a| T::lit(2.0 * a as f64 - (side as f64 - 1.0)) / norm).collect();
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        for ai in 0..side {
            for aq in 0..side {
                points.push(Complex::new(levels[ai], levels[aq]));
                labels.push((gray(ai as u32) << bits_per_axis) | gray(aq as u32));
            }
        }
        let mut point_of_label = vec![0; order];
        for (idx, &l) in labels.iter().enumerate() {
            point_of_label[l as usize] = idx;
        }
        Ok(Self { order, bits_per_symbol: 2 * bits_per_axis, levels, points, labels, point_of_label })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    #[inline]
    pub fn bits_per_axis(&self) -> usize {
        self.bits_per_symbol / 2
    }

    #[inline]
    pub fn points(&self) -> &[Complex<T>] {
        &self.points
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Normalized per-axis amplitudes in ascending order.
    #[inline]
    pub fn axis_levels(&self) -> &[T] {
        &self.levels
    }

    /// Gray label of the bits carried by axis level `index`.
    #[inline]
    pub fn axis_label(&self, index: usize) -> u32 {
        gray(index as u32)
    }

    pub fn point_for_label(&self, label: u32) -> Complex<T> {
        self.points[self.point_of_label[label as usize]]
    }

    /// Bit `k` (0 = most significant) of `label`.
    #[inline]
    pub fn label_bit(&self, label: u32, k: usize) -> u8 {
        ((label >> (self.bits_per_symbol - 1 - k)) & 1) as u8
    }

    pub fn label_to_bits(&self, label: u32) -> Vec<u8> {
        (0..self.bits_per_symbol).map(|k| self.label_bit(label, k)).collect()
    }

    pub fn bits_to_label(&self, bits: &[u8]) -> u32 {
        bits.iter().fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32)
    }

    pub fn mean_power(&self) -> T {
        self.points.iter().map(|p| p.norm_sqr()).sum::<T>() / T::lit(self.order as f64)
    }
}

pub fn build_constellation<T: Scalar>(order: usize) -> Result<Constellation<T>> {
    Constellation::new(order)
}

pub fn map_bits<T: Scalar>(bits: &[u8], c: &Constellation<T>) -> Result<Vec<Complex<T>>> {
    let bps = c.bits_per_symbol();
    if !bits.len().is_multiple_of(bps) {
        return Err(Error::LengthMismatch { len: bits.len(), bits_per_symbol: bps });
    }
    Ok(bits.chunks(bps).map(|g| c.point_for_label(c.bits_to_label(g))).collect())
}

/// Index of the Euclidean-nearest point; ties go to the smaller label.
pub fn nearest_point<T: Scalar>(s: Complex<T>, c: &Constellation<T>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (idx, p) in c.points.iter().enumerate() {
        let d = (s - p).norm_sqr();
        if d < best_d || (d == best_d && c.labels[idx] < c.labels[best]) {
            best = idx;
            best_d = d;
        }
    }
    best
}

pub fn hard_demap<T: Scalar>(s: Complex<T>, c: &Constellation<T>) -> Vec<u8> {
    c.label_to_bits(c.labels[nearest_point(s, c)])
}

/// Max-log LLRs for `z = gain * s + noise` with noise variance `var`.
pub fn maxlog_llr<T: Scalar>(z: Complex<T>, gain: T, var: T, c: &Constellation<T>, clip: T) -> SoftBits<T> {
    let bps = c.bits_per_symbol();
    let mut min0 = vec![T::infinity(); bps];
    let mut min1 = vec![T::infinity(); bps];
    for (p, &label) in c.points.iter().zip(&c.labels) {
        let d = (z - p * gain).norm_sqr();
        for k in 0..bps {
            let slot = if c.label_bit(label, k) == 0 { &mut min0[k] } else { &mut min1[k] };
            if d < *slot {
                *slot = d;
            }
        }
    }
    let llrs = min0.iter().zip(&min1).map(|(&d0, &d1)| clip_llr((d0 - d1) / var, clip)).collect();
    SoftBits { llrs }
}

/// Clamp to `[-clip, clip]`; NaN maps to zero.
#[inline]
pub fn clip_llr<T: Scalar>(l: T, clip: T) -> T {
    if l.is_nan() {
        T::zero()
    } else {
        l.max(-clip).min(clip)
    }
}
