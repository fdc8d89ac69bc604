//! Classical MIMO detectors with a uniform soft-output result type.

mod kbest;
mod linear;
mod ml;

pub use kbest::{detect_kbest, KBestConfig};
pub use linear::{detect_mf, detect_mmse, detect_zf, mmse_filter};
pub use ml::{detect_ml, DEFAULT_ENUMERATION_CAP};

use num_complex::Complex;

use crate::error::Result;
use crate::linalg::ComplexMatrix;
use crate::modem::{Constellation, SoftBits};
use crate::scalar::Scalar;

/// Per-layer detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<T> {
    pub llrs: Vec<SoftBits<T>>,
    pub hard_bits: Vec<Vec<u8>>,
    pub hard_symbols: Vec<Complex<T>>,
    pub detector_name: String,
}

impl<T: Scalar> DetectionResult<T> {
    pub fn layers(&self) -> usize {
        self.hard_symbols.len()
    }

    /// Hard bits of all layers concatenated, layer-major.
    pub fn flat_bits(&self) -> Vec<u8> {
        self.hard_bits.iter().flatten().copied().collect()
    }

    /// Builds a result whose hard decisions are the given labels.
    pub(crate) fn from_labels(name: &str, llrs: Vec<SoftBits<T>>, labels: &[u32], c: &Constellation<T>) -> Self {
        Self {
            llrs,
            hard_bits: labels.iter().map(|&l| c.label_to_bits(l)).collect(),
            hard_symbols: labels.iter().map(|&l| c.point_for_label(l)).collect(),
            detector_name: name.to_string(),
        }
    }

    /// Builds a result with hard bits taken from LLR signs (`ℓ > 0` is a one).
    pub fn from_llrs(name: &str, llrs: Vec<SoftBits<T>>, c: &Constellation<T>) -> Self {
        let labels: Vec<u32> =
            llrs.iter().map(|s| s.llrs.iter().fold(0u32, |acc, &l| (acc << 1) | (l > T::zero()) as u32)).collect();
        Self::from_labels(name, llrs, &labels, c)
    }
}

/// What a detector sees for one resource element.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a, T> {
    pub h_est: &'a ComplexMatrix<T>,
    pub y: &'a [Complex<T>],
    pub noise_var: T,
}

/// Common interface for the harness. Implementations are immutable and
/// shareable across threads.
pub trait Detector<T: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn detect(&self, obs: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>>;

    /// Detects a chunk of independent REs; learned detectors override this
    /// to batch their forward pass.
    fn detect_batch(&self, obs: &[Observation<'_, T>], c: &Constellation<T>) -> Result<Vec<DetectionResult<T>>> {
        obs.iter().map(|o| self.detect(o, c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zf {
    pub llr_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mmse {
    pub llr_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedFilter {
    pub llr_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ml {
    pub llr_clip: f64,
    pub enumeration_cap: u128,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KBest {
    pub cfg: KBestConfig,
}

impl<T: Scalar> Detector<T> for Zf {
    fn name(&self) -> String {
        "zf".into()
    }

    fn detect(&self, o: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        detect_zf(o.h_est, o.y, o.noise_var, c, T::lit(self.llr_clip))
    }
}

impl<T: Scalar> Detector<T> for Mmse {
    fn name(&self) -> String {
        "mmse".into()
    }

    fn detect(&self, o: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        detect_mmse(o.h_est, o.y, o.noise_var, c, T::lit(self.llr_clip))
    }
}

impl<T: Scalar> Detector<T> for MatchedFilter {
    fn name(&self) -> String {
        "mf".into()
    }

    fn detect(&self, o: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        detect_mf(o.h_est, o.y, o.noise_var, c, T::lit(self.llr_clip))
    }
}

impl<T: Scalar> Detector<T> for Ml {
    fn name(&self) -> String {
        "ml".into()
    }

    fn detect(&self, o: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        detect_ml(o.h_est, o.y, o.noise_var, c, T::lit(self.llr_clip), self.enumeration_cap)
    }
}

impl<T: Scalar> Detector<T> for KBest {
    fn name(&self) -> String {
        format!("kbest({})", self.cfg.k)
    }

    fn detect(&self, o: &Observation<'_, T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        detect_kbest(o.h_est, o.y, o.noise_var, c, &self.cfg)
    }
}
