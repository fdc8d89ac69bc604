use num_complex::Complex;

use super::DetectionResult;
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::modem::{clip_llr, Constellation, SoftBits};
use crate::scalar::Scalar;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Exhaustive maximum-likelihood detection over `X^{N_t}` with max-log LLRs
/// from the full candidate list. The hard decision does not depend on σ².
pub fn detect_ml<T: Scalar>(
    h_est: &ComplexMatrix<T>,
    y: &[Complex<T>],
    noise_var: T,
    c: &Constellation<T>,
    clip: T,
    cap: u128,
) -> Result<DetectionResult<T>> {
    let (nr, nt) = (h_est.rows(), h_est.cols());
    if y.len() != nr {
        return Err(Error::DimensionMismatch(format!(
            "received vector has {} entries, channel has {nr} rows",
            y.len()
        )));
    }
    let m = c.order();
    let size = (m as u128).checked_pow(nt as u32).unwrap_or(u128::MAX);
    if size > cap {
        return Err(Error::SearchSpaceTooLarge { size, cap });
    }

    // column_points[i][p] = Ĥ_{:,i} · s_p
    let column_points: Vec<Vec<Vec<Complex<T>>>> = (0..nt)
        .map(|i| {
            let col = h_est.column(i);
            c.points().iter().map(|&s| col.iter().map(|&h| h * s).collect()).collect()
        })
        .collect();

    // best metric per (layer, point index)
    let mut per_point = vec![T::infinity(); nt * m];
    let mut best_metric = T::infinity();
    let mut best = vec![0usize; nt];
    let mut idx = vec![0usize; nt];
    // residual after subtracting layers 0..i
    let mut partial: Vec<Vec<Complex<T>>> = vec![y.to_vec(); nt + 1];

    fn refresh<T: Scalar>(from: usize, idx: &[usize], cp: &[Vec<Vec<Complex<T>>>], partial: &mut [Vec<Complex<T>>]) {
        for i in from..idx.len() {
            let (head, tail) = partial.split_at_mut(i + 1);
            for ((dst, &src), &sub) in tail[0].iter_mut().zip(head[i].iter()).zip(&cp[i][idx[i]]) {
                *dst = src - sub;
            }
        }
    }

    refresh(0, &idx, &column_points, &mut partial);
    loop {
        let metric: T = partial[nt].iter().map(|r| r.norm_sqr()).sum();
        if metric < best_metric {
            best_metric = metric;
            best.copy_from_slice(&idx);
        }
        for (i, &p) in idx.iter().enumerate() {
            let slot = &mut per_point[i * m + p];
            if metric < *slot {
                *slot = metric;
            }
        }
        // odometer, last layer fastest
        let mut level = nt;
        let exhausted = loop {
            if level == 0 {
                break true;
            }
            level -= 1;
            idx[level] += 1;
            if idx[level] < m {
                break false;
            }
            idx[level] = 0;
        };
        if exhausted {
            break;
        }
        refresh(level, &idx, &column_points, &mut partial);
    }

    let bps = c.bits_per_symbol();
    let llrs = (0..nt)
        .map(|i| {
            let llrs = (0..bps)
                .map(|k| {
                    let (mut d0, mut d1) = (T::infinity(), T::infinity());
                    for (p, &label) in c.labels().iter().enumerate() {
                        let v = per_point[i * m + p];
                        if c.label_bit(label, k) == 0 {
                            d0 = d0.min(v);
                        } else {
                            d1 = d1.min(v);
                        }
                    }
                    clip_llr((d0 - d1) / noise_var, clip)
                })
                .collect();
            SoftBits { llrs }
        })
        .collect();
    let labels: Vec<u32> = best.iter().map(|&p| c.labels()[p]).collect();
    Ok(DetectionResult::from_labels("ml", llrs, &labels, c))
}
