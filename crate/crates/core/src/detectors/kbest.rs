//! Breadth-first K-best tree search on the real-valued expansion.
//!
//! The complex system `y = Hx + n` is rewritten as a real system of twice the
//! size using `[[Re, -Im], [Im, Re]]`; each real unknown takes one of the
//! `√M` per-axis amplitudes. Columns are ordered by sorted QR so the tree
//! root sits on the strongest `R` diagonal entry. After the thin QR,
//! `‖y - Hx‖² = ‖Qᵀy - Rx‖² + const`, which is accumulated level by level
//! from the bottom row of `R` upwards.

use num_complex::Complex;

use super::DetectionResult;
use crate::error::{Error, Result};
use crate::linalg::{qr_decompose, sorted_qr_order, ComplexMatrix};
use crate::modem::{Constellation, SoftBits, DEFAULT_LLR_CLIP};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KBestConfig {
    pub k: usize,
    pub llr_clip: f64,
}

impl KBestConfig {
    pub fn new(k: usize) -> Self {
        Self { k, llr_clip: DEFAULT_LLR_CLIP }
    }
}

#[derive(Clone)]
struct Path<T> {
    metric: T,
    /// Axis-level index for each search depth (root first).
    levels: Vec<u8>,
}

pub fn detect_kbest<T: Scalar>(
    h_est: &ComplexMatrix<T>,
    y: &[Complex<T>],
    noise_var: T,
    c: &Constellation<T>,
    cfg: &KBestConfig,
) -> Result<DetectionResult<T>> {
    if cfg.k == 0 {
        return Err(Error::Config("K-best list size must be at least 1".into()));
    }
    let (nr, nt) = (h_est.rows(), h_est.cols());
    if y.len() != nr {
        return Err(Error::DimensionMismatch(format!(
            "received vector has {} entries, channel has {nr} rows",
            y.len()
        )));
    }
    let real = h_est.real_expansion();
    let order = sorted_qr_order(&real);
    let (q, r) = qr_decompose(&real.select_columns(&order))?;
    let y_real: Vec<T> = y.iter().map(|z| z.re).chain(y.iter().map(|z| z.im)).collect();
    let z = q.tr_mul_vec(&y_real);

    let n = 2 * nt;
    let amps = c.axis_levels();
    let mut survivors = vec![Path { metric: T::zero(), levels: Vec::with_capacity(n) }];
    let mut assigned = vec![T::zero(); n];
    for depth in 0..n {
        let row = n - 1 - depth;
        let mut children = Vec::with_capacity(survivors.len() * amps.len());
        for path in &survivors {
            // already-decided unknowns are rows n-1 .. row+1
            for (d, &lvl) in path.levels.iter().enumerate() {
                assigned[n - 1 - d] = amps[lvl as usize];
            }
            let mut target = z[row];
            for col in row + 1..n {
                target -= r.get(row, col) * assigned[col];
            }
            let diag = r.get(row, row);
            for (a, &amp) in amps.iter().enumerate() {
                let e = target - diag * amp;
                let mut levels = path.levels.clone();
                levels.push(a as u8);
                children.push(Path { metric: path.metric + e * e, levels });
            }
        }
        if children.len() > cfg.k {
            children.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap_or(std::cmp::Ordering::Equal));
            children.truncate(cfg.k);
        }
        survivors = children;
    }

    // per survivor: label for each layer in original order
    let bpa = c.bits_per_axis();
    let labels_of = |path: &Path<T>| -> Vec<u32> {
        let mut axis = vec![0usize; n];
        for (d, &lvl) in path.levels.iter().enumerate() {
            axis[order[n - 1 - d]] = lvl as usize;
        }
        (0..nt).map(|i| (c.axis_label(axis[i]) << bpa) | c.axis_label(axis[nt + i])).collect()
    };
    let leaves: Vec<(T, Vec<u32>)> = survivors.iter().map(|p| (p.metric, labels_of(p))).collect();
    let best = leaves
        .iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(Error::NonFinite("k-best search"))?;

    let clip = T::lit(cfg.llr_clip);
    let bps = c.bits_per_symbol();
    let llrs = (0..nt)
        .map(|i| SoftBits {
            llrs: (0..bps)
                .map(|k| {
                    let (mut d0, mut d1) = (T::infinity(), T::infinity());
                    for (m, labels) in &leaves {
                        if c.label_bit(labels[i], k) == 0 {
                            d0 = d0.min(*m);
                        } else {
                            d1 = d1.min(*m);
                        }
                    }
                    match (d0.is_finite(), d1.is_finite()) {
                        (true, true) => ((d0 - d1) / noise_var).max(-clip).min(clip),
                        (false, _) => clip,
                        (_, false) => -clip,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(DetectionResult::from_labels(&format!("kbest({})", cfg.k), llrs, &best.1, c))
}
