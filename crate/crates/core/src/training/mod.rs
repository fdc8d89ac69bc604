//! Supervised training of the attention detector: binary cross-entropy on
//! freshly simulated REs, hand-derived gradients, Adam.

mod adam;
mod backward;
mod gradcheck;
mod loss;

pub use adam::{adam_step, OptimizerState};
pub use gradcheck::{grad_check, grad_check_at, grad_check_batch, rel_error, GradCheckReport, FULL_CHECK_LIMIT};
pub use loss::bce_loss;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex;
use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attdet::{forward_batch, init_params, save_checkpoint, ArchConfig, AttInput, GridShape, ModelParams};
use crate::channel::{sample_re, snr_to_noise_var, ChannelConfig, ChannelSampler, ReSample};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::modem::Constellation;
use crate::rng::substream;
use crate::scalar::Scalar;

/// One labelled RE.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    pub h_true: ComplexMatrix<T>,
    pub h_est: ComplexMatrix<T>,
    pub y: Vec<Complex<T>>,
    pub noise_var: T,
    /// Transmitted label bits per layer.
    pub bits: Vec<Vec<u8>>,
    pub bits_per_symbol: usize,
}

impl<T: Scalar> TrainSample<T> {
    pub fn from_re(re: ReSample<T>, bits_per_symbol: usize) -> Self {
        Self {
            bits: re.bits.chunks(bits_per_symbol).map(<[u8]>::to_vec).collect(),
            h_true: re.channel.h_true,
            h_est: re.channel.h_est,
            y: re.y,
            noise_var: re.channel.noise_var,
            bits_per_symbol,
        }
    }
}

/// REs sharing a layer count; with a grid they form consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<T> {
    pub samples: Vec<TrainSample<T>>,
    pub grid: Option<GridShape>,
}

impl<T> TrainingBatch<T> {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

fn active_bits<T>(samples: &[TrainSample<T>]) -> usize {
    samples.iter().map(|s| s.bits.len() * s.bits_per_symbol).sum()
}

/// Mean loss over all active bits of the batch and its gradient in the flat
/// parameter layout.
pub fn backward<T: Scalar>(batch: &TrainingBatch<T>, params: &ModelParams<T>) -> Result<(T, Vec<T>)> {
    let active = active_bits(&batch.samples);
    if active == 0 {
        return Err(Error::EmptyMask);
    }
    backward::loss_and_grad(params, &batch.samples, batch.grid, T::lit(active as f64))
}

/// Same as [`backward`], split into `chunk`-sized pieces evaluated in
/// parallel. Partial results are summed in chunk order, so the result does
/// not depend on the number of worker threads.
pub fn backward_chunked<T: Scalar>(
    batch: &TrainingBatch<T>,
    params: &ModelParams<T>,
    chunk: usize,
) -> Result<(T, Vec<T>)> {
    let active = active_bits(&batch.samples);
    if active == 0 {
        return Err(Error::EmptyMask);
    }
    let norm = T::lit(active as f64);
    let parts: Vec<Result<(T, Vec<T>)>> =
        batch.samples.par_chunks(chunk.max(1)).map(|s| backward::loss_and_grad(params, s, batch.grid, norm)).collect();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

fn default_samples_total() -> u64 {
    6_000_000
}
fn default_batch_size() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}
fn default_snr_range() -> [f64; 2] {
    [0.0, 20.0]
}
fn default_modulations() -> Vec<usize> {
    vec![16]
}
fn default_channel() -> ChannelConfig {
    ChannelConfig::iid(8, 2)
}
fn default_eval_every() -> u64 {
    100
}
fn default_eval_snr() -> f64 {
    10.0
}
fn default_eval_samples() -> usize {
    2000
}
fn default_sub_batch() -> usize {
    32
}
fn default_divergence_factor() -> f64 {
    10.0
}
fn default_divergence_patience() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_samples_total")]
    pub samples_total: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Cosine-anneal the step size from `lr` to this value over the run.
    #[serde(default)]
    pub lr_final: Option<f64>,
    /// Training SNR drawn uniformly from `[lo, hi]` dB per sample.
    #[serde(default = "default_snr_range")]
    pub snr_range_db: [f64; 2],
    /// Orders drawn uniformly per sample; all layers of a sample share one.
    #[serde(default = "default_modulations")]
    pub modulations: Vec<usize>,
    #[serde(default = "default_channel")]
    pub channel: ChannelConfig,
    /// Steps between held-out evaluations.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_snr")]
    pub eval_snr_db: f64,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Order of the held-out set, defaults to the first training order.
    #[serde(default)]
    pub eval_order: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// REs per gradient work item.
    #[serde(default = "default_sub_batch")]
    pub sub_batch: usize,
    /// Frame layout for score smoothing; each frame holds independent REs.
    #[serde(default)]
    pub grid: Option<GridShape>,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default = "default_divergence_factor")]
    pub divergence_factor: f64,
    #[serde(default = "default_divergence_patience")]
    pub divergence_patience: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        let [lo, hi] = self.snr_range_db;
        if !(lo <= hi) {
            return Err(Error::Config(format!("snr_range_db must satisfy lo <= hi, got [{lo}, {hi}]")));
        }
        if self.batch_size == 0 || self.sub_batch == 0 {
            return Err(Error::Config("batch_size and sub_batch must be at least 1".into()));
        }
        if self.modulations.is_empty() {
            return Err(Error::Config("modulations must not be empty".into()));
        }
        for &m in self.modulations.iter().chain(self.eval_order.iter()) {
            Constellation::<f64>::new(m)?;
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be nonnegative, got {}", self.lr)));
        }
        if let Some(f) = self.lr_final {
            if !(f >= 0.0) {
                return Err(Error::Config(format!("lr_final must be nonnegative, got {f}")));
            }
        }
        if let Some(g) = self.grid {
            if g.size() == 0 || !self.batch_size.is_multiple_of(g.size()) || !self.sub_batch.is_multiple_of(g.size()) {
                return Err(Error::Config(format!(
                    "batch_size and sub_batch must be multiples of the {}x{} grid",
                    g.rows, g.cols
                )));
            }
        }
        Ok(())
    }

    fn eval_order(&self) -> usize {
        self.eval_order.unwrap_or(self.modulations[0])
    }
}

/// One training-log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub samples_seen: u64,
    pub loss: f64,
    pub eval_snr_db: f64,
    pub eval_ber: f64,
    pub wall_seconds: f64,
}

pub const TRAIN_LOG_HEADER: &str = "step,samples_seen,loss,eval_snr_db,eval_ber,wall_seconds";

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.9},{},{:.9},{:.3}",
            self.step, self.samples_seen, self.loss, self.eval_snr_db, self.eval_ber, self.wall_seconds
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub initial_loss: Option<f64>,
}

/// Appends rows to a CSV file, writing the header when the file is new.
struct LogWriter {
    path: PathBuf,
    file: std::fs::File,
}

impl LogWriter {
    fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file =
            std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{TRAIN_LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self { path: path.to_path_buf(), file })
    }

    fn append(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv_line()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Draws `count` labelled REs.
pub fn generate_samples<T: Scalar, R: Rng + ?Sized>(
    channel: &ChannelSampler<T>,
    orders: &[Constellation<T>],
    snr_range_db: [f64; 2],
    count: usize,
    rng: &mut R,
) -> Vec<TrainSample<T>> {
    let n_tx = channel.config().n_tx;
    (0..count)
        .map(|_| {
            let [lo, hi] = snr_range_db;
            let snr = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let c = &orders[if orders.len() > 1 { rng.random_range(0..orders.len()) } else { 0 }];
            let nv = T::lit(snr_to_noise_var(snr, n_tx));
            TrainSample::from_re(sample_re(channel, c, nv, rng), c.bits_per_symbol())
        })
        .collect()
}

/// Hard-decision BER of the model on labelled samples.
pub fn evaluate_ber<T: Scalar>(params: &ModelParams<T>, samples: &[TrainSample<T>], chunk: usize) -> Result<f64> {
    let counts: Vec<Result<(u64, u64)>> = samples
        .par_chunks(chunk.max(1))
        .map(|part| {
            let bps = part[0].bits_per_symbol;
            let inputs: Vec<AttInput<'_, T>> = part.iter().map(|s| AttInput { h_est: &s.h_est, y: &s.y }).collect();
            let logits = forward_batch(params, &inputs, None, bps)?;
            let mut errs = 0u64;
            let mut total = 0u64;
            for (s, l) in part.iter().zip(&logits) {
                for (bits, ll) in s.bits.iter().zip(l) {
                    for (&b, &x) in bits.iter().zip(ll) {
                        errs += ((x > T::zero()) != (b == 1)) as u64;
                        total += 1;
                    }
                }
            }
            Ok((errs, total))
        })
        .collect();
    let (mut e, mut n) = (0u64, 0u64);
    for c in counts {
        let (a, b) = c?;
        e += a;
        n += b;
    }
    Ok(if n == 0 { 0.0 } else { e as f64 / n as f64 })
}

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_INIT: u64 = 3;

/// The initialization [`train`] starts from.
pub fn initial_params<T: Scalar>(cfg: &TrainConfig, arch: &ArchConfig) -> Result<ModelParams<T>> {
    init_params(arch, cfg.channel.n_rx, &mut substream(cfg.seed, &[STREAM_INIT]))
}

/// Trains a freshly initialized model.
pub fn train<T: Scalar>(cfg: &TrainConfig, arch: &ArchConfig) -> Result<(ModelParams<T>, TrainLog)> {
    train_from(cfg, initial_params(cfg, arch)?, |_| {})
}

/// Trains starting from `params`, calling `observe` on every log row.
pub fn train_from<T: Scalar>(
    cfg: &TrainConfig,
    mut params: ModelParams<T>,
    mut observe: impl FnMut(&LogRow),
) -> Result<(ModelParams<T>, TrainLog)> {
    cfg.validate()?;
    if params.n_rx() != cfg.channel.n_rx {
        return Err(Error::CheckpointMismatch(format!(
            "model expects n_rx={}, channel has {}",
            params.n_rx(),
            cfg.channel.n_rx
        )));
    }
    let max_bits = params.arch().max_bits;
    if let Some(&m) = cfg.modulations.iter().find(|&&m| m.trailing_zeros() as usize > max_bits) {
        return Err(Error::Config(format!("order {m} needs more than the model's {max_bits} output bits")));
    }
    if cfg.grid.is_some() && !params.arch().score_smoothing {
        return Err(Error::Config("a training grid needs score_smoothing enabled".into()));
    }

    let sampler = ChannelSampler::<T>::new(&cfg.channel)?;
    let orders: Vec<Constellation<T>> =
        cfg.modulations.iter().map(|&m| Constellation::new(m)).collect::<Result<_>>()?;
    let eval_c = Constellation::<T>::new(cfg.eval_order())?;
    let eval_set = generate_samples(
        &sampler,
        std::slice::from_ref(&eval_c),
        [cfg.eval_snr_db, cfg.eval_snr_db],
        cfg.eval_samples,
        &mut substream(cfg.seed, &[STREAM_EVAL]),
    );
    let mut rng = substream(cfg.seed, &[STREAM_TRAIN]);
    let mut opt = OptimizerState::<T>::new(params.len(), cfg.lr);
    let mut writer = cfg.log_path.as_deref().map(LogWriter::open).transpose()?;
    let mut log = TrainLog::default();
    let start = Instant::now();

    let steps = cfg.samples_total.div_ceil(cfg.batch_size as u64);
    let mut seen = 0u64;
    let mut over = 0u64;
    for step in 1..=steps {
        let n = (cfg.samples_total - seen).min(cfg.batch_size as u64) as usize;
        let n = match cfg.grid {
            Some(g) => n.div_ceil(g.size()) * g.size(),
            None => n,
        };
        let batch = TrainingBatch {
            samples: generate_samples(&sampler, &orders, cfg.snr_range_db, n, &mut rng),
            grid: cfg.grid,
        };
        let (loss, grad) = backward_chunked(&batch, &params, cfg.sub_batch)?;
        let loss = loss.as_f64();
        seen += n as u64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { step, reason: format!("non-finite loss {loss}") });
        }
        let initial = *log.initial_loss.get_or_insert(loss);
        if loss > cfg.divergence_factor * initial {
            over += 1;
            if over >= cfg.divergence_patience {
                return Err(Error::DivergenceDetected {
                    step,
                    reason: format!("loss above {}x its initial value for {over} steps", cfg.divergence_factor),
                });
            }
        } else {
            over = 0;
        }
        if let Some(f) = cfg.lr_final {
            let frac = (step - 1) as f64 / (steps.max(2) - 1) as f64;
            opt.lr = f + 0.5 * (cfg.lr - f) * (1.0 + (std::f64::consts::PI * frac).cos());
        }
        adam_step(params.flat_mut(), &grad, &mut opt);

        if step % cfg.eval_every.max(1) == 0 || step == steps {
            let row = LogRow {
                step,
                samples_seen: seen,
                loss,
                eval_snr_db: cfg.eval_snr_db,
                eval_ber: evaluate_ber(&params, &eval_set, 256)?,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = writer.as_mut() {
                w.append(&row)?;
            }
            observe(&row);
            log.rows.push(row);
        }
        if let (Some(path), Some(every)) = (&cfg.checkpoint_path, cfg.checkpoint_every) {
            if every > 0 && step % every == 0 {
                save_checkpoint(&params, path)?;
            }
        }
    }
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(&params, path)?;
    }
    Ok((params, log))
}
