//! Flat per-RE MIMO channels, receiver noise and CSI error.
//!
//! `y = Hx + n` with `n ~ CN(0, σ²I)`. Channel entries have unit variance and
//! symbols unit power, so with the SNR convention used here
//! (`σ² = N_t · 10^(-SNR/10)`) the SNR is the per-receive-antenna ratio.

use num_complex::Complex;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, ComplexMatrix};
use crate::modem::{map_bits, Constellation};
use crate::rng::complex_normal;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// i.i.d. CN(0,1) entries.
    #[default]
    Iid,
    /// `R_rx^{1/2} G R_tx^{1/2}` with exponential correlation `ρ^{|i-j|}`.
    Kronecker,
    /// Fixed identity channel (pure AWGN), mainly for calibration.
    Awgn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_rx: usize,
    pub n_tx: usize,
    #[serde(default)]
    pub model: ChannelModel,
    #[serde(default)]
    pub rho_tx: f64,
    #[serde(default)]
    pub rho_rx: f64,
    #[serde(default)]
    pub csi_error_var: f64,
}

impl ChannelConfig {
    pub fn iid(n_rx: usize, n_tx: usize) -> Self {
        Self { n_rx, n_tx, model: ChannelModel::Iid, rho_tx: 0.0, rho_rx: 0.0, csi_error_var: 0.0 }
    }

    pub fn kronecker(n_rx: usize, n_tx: usize, rho_tx: f64, rho_rx: f64) -> Self {
        Self { n_rx, n_tx, model: ChannelModel::Kronecker, rho_tx, rho_rx, csi_error_var: 0.0 }
    }

    pub fn awgn(n: usize) -> Self {
        Self { n_rx: n, n_tx: n, model: ChannelModel::Awgn, rho_tx: 0.0, rho_rx: 0.0, csi_error_var: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx < 1 || self.n_rx < self.n_tx {
            return Err(Error::Config(format!("need n_rx >= n_tx >= 1, got n_rx={} n_tx={}", self.n_rx, self.n_tx)));
        }
        for (name, rho) in [("rho_tx", self.rho_tx), ("rho_rx", self.rho_rx)] {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {rho}")));
            }
        }
        if !(self.csi_error_var >= 0.0) {
            return Err(Error::Config(format!("csi_error_var must be >= 0, got {}", self.csi_error_var)));
        }
        Ok(())
    }
}

/// True channel, receiver's estimate and noise variance for one RE.
#[derive(Debug, Clone)]
pub struct ChannelRealization<T> {
    pub h_true: ComplexMatrix<T>,
    pub h_est: ComplexMatrix<T>,
    pub noise_var: T,
}

/// Exponential correlation matrix `R[i][j] = ρ^{|i-j|}`.
pub fn exponential_correlation<T: Scalar>(n: usize, rho: f64) -> ComplexMatrix<T> {
    ComplexMatrix::from_fn(n, n, |i, j| {
        let e = (i as i64 - j as i64).unsigned_abs() as i32;
        Complex::new(T::lit(rho.powi(e)), T::zero())
    })
}

/// Channel generator with the correlation square roots precomputed.
#[derive(Debug, Clone)]
pub struct ChannelSampler<T> {
    cfg: ChannelConfig,
    sqrt_rx: Option<ComplexMatrix<T>>,
    sqrt_tx: Option<ComplexMatrix<T>>,
}

impl<T: Scalar> ChannelSampler<T> {
    pub fn new(cfg: &ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        let (sqrt_rx, sqrt_tx) = match cfg.model {
            ChannelModel::Kronecker => (
                Some(cholesky(&exponential_correlation::<T>(cfg.n_rx, cfg.rho_rx))?),
                Some(cholesky(&exponential_correlation::<T>(cfg.n_tx, cfg.rho_tx))?),
            ),
            _ => (None, None),
        };
        Ok(Self { cfg: cfg.clone(), sqrt_rx, sqrt_tx })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexMatrix<T> {
        let (nr, nt) = (self.cfg.n_rx, self.cfg.n_tx);
        if self.cfg.model == ChannelModel::Awgn {
            return ComplexMatrix::from_fn(nr, nt, |i, j| {
                if i == j {
                    Complex::new(T::one(), T::zero())
                } else {
                    Complex::default()
                }
            });
        }
        let g = ComplexMatrix::from_fn(nr, nt, |_, _| complex_normal(rng, T::one()));
        match (&self.sqrt_rx, &self.sqrt_tx) {
            (Some(lr), Some(lt)) => {
                // H = L_rx G L_txᵀ; L is real, so vec(H) has covariance R_tx ⊗ R_rx
                ComplexMatrix::from_fn(nr, nt, |i, j| {
                    let mut acc = Complex::default();
                    for a in 0..=i {
                        let mut inner = Complex::default();
                        for b in 0..=j {
                            inner += g.get(a, b) * lt.get(j, b).re;
                        }
                        acc += inner * lr.get(i, a).re;
                    }
                    acc
                })
            }
            _ => g,
        }
    }
}

pub fn sample_channel<T: Scalar, R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Result<ComplexMatrix<T>> {
    Ok(ChannelSampler::new(cfg)?.sample(rng))
}

pub fn snr_to_noise_var(snr_db: f64, n_tx: usize) -> f64 {
    n_tx as f64 * 10f64.powf(-snr_db / 10.0)
}

/// `y = Hx + n`.
pub fn apply_channel<T: Scalar, R: Rng + ?Sized>(
    h: &ComplexMatrix<T>,
    x: &[Complex<T>],
    noise_var: T,
    rng: &mut R,
) -> Result<Vec<Complex<T>>> {
    if x.len() != h.cols() {
        return Err(Error::DimensionMismatch(format!("channel has {} inputs, got {} symbols", h.cols(), x.len())));
    }
    let mut y = h.mul_vec(x);
    if noise_var > T::zero() {
        for v in y.iter_mut() {
            *v += complex_normal(rng, noise_var);
        }
    }
    Ok(y)
}

/// `Ĥ = H + E` with `E` entries i.i.d. CN(0, σ_e²).
pub fn perturb_csi<T: Scalar, R: Rng + ?Sized>(
    h: &ComplexMatrix<T>,
    csi_error_var: T,
    rng: &mut R,
) -> ComplexMatrix<T> {
    if csi_error_var == T::zero() {
        return h.clone();
    }
    ComplexMatrix::from_fn(h.rows(), h.cols(), |i, j| h.get(i, j) + complex_normal(rng, csi_error_var))
}

/// One simulated resource element with its ground truth.
#[derive(Debug, Clone)]
pub struct ReSample<T> {
    pub channel: ChannelRealization<T>,
    pub y: Vec<Complex<T>>,
    pub symbols: Vec<Complex<T>>,
    /// Transmitted bits, `bits_per_symbol` per layer, layer-major.
    pub bits: Vec<u8>,
}

/// Draws channel, bits, noise and CSI error in that order from `rng`.
pub fn sample_re<T: Scalar, R: Rng + ?Sized>(
    sampler: &ChannelSampler<T>,
    constellation: &Constellation<T>,
    noise_var: T,
    rng: &mut R,
) -> ReSample<T> {
    let cfg = sampler.config();
    let h_true = sampler.sample(rng);
    let bits: Vec<u8> = (0..cfg.n_tx * constellation.bits_per_symbol()).map(|_| rng.random_range(0..2u8)).collect();
    let symbols = map_bits(&bits, constellation).expect("bit count is a multiple of bits_per_symbol");
    let y = apply_channel(&h_true, &symbols, noise_var, rng).expect("symbol count matches n_tx");
    let h_est = perturb_csi(&h_true, T::lit(cfg.csi_error_var), rng);
    ReSample { channel: ChannelRealization { h_true, h_est, noise_var }, y, symbols, bits }
}
