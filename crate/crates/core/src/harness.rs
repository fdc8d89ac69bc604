//! Monte-Carlo BER sweeps, experiment configuration and result files.
//!
//! Every RE at a given SNR is generated from a substream keyed by
//! `(seed, snr, chunk)`, so all detectors evaluated at that SNR see the same
//! channels, symbols and noise (common random numbers), and results do not
//! depend on the number of worker threads.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attdet::{load_checkpoint, ArchConfig, AttDetDetector, GridShape};
use crate::channel::{sample_re, snr_to_noise_var, ChannelConfig, ChannelSampler, ReSample};
use crate::detectors::{
    Detector, KBest, KBestConfig, MatchedFilter, Ml, Mmse, Observation, Zf, DEFAULT_ENUMERATION_CAP,
};
use crate::error::{Error, Result};
use crate::modem::{Constellation, DEFAULT_LLR_CLIP};
use crate::rng::substream;
use crate::training::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "detector,snr_db,bit_errors,bits_counted,ber,re_counted,seed";

/// Detector selector as written in configuration files and on the command
/// line: `zf`, `mmse`, `mf`, `ml`, `kbest(K)` or `attdet(PATH)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DetectorSpec {
    Zf,
    Mmse,
    Mf,
    Ml,
    KBest(usize),
    AttDet(PathBuf),
}

impl FromStr for DetectorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg =
            |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.strip_prefix('(')).and_then(|r| r.strip_suffix(')'));
        match s {
            "zf" => return Ok(Self::Zf),
            "mmse" => return Ok(Self::Mmse),
            "mf" => return Ok(Self::Mf),
            "ml" => return Ok(Self::Ml),
            _ => {}
        }
        if let Some(k) = arg("kbest") {
            let k: usize = k.trim().parse().map_err(|_| Error::Config(format!("bad K-best width in {s:?}")))?;
            if k == 0 {
                return Err(Error::Config("K-best width must be at least 1".into()));
            }
            return Ok(Self::KBest(k));
        }
        if let Some(p) = arg("attdet") {
            if p.trim().is_empty() {
                return Err(Error::Config("attdet needs a checkpoint path".into()));
            }
            return Ok(Self::AttDet(PathBuf::from(p.trim())));
        }
        Err(Error::Config(format!("unknown detector {s:?} (expected zf, mmse, mf, ml, kbest(K) or attdet(PATH))")))
    }
}

impl TryFrom<String> for DetectorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DetectorSpec> for String {
    fn from(d: DetectorSpec) -> String {
        d.to_string()
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zf => f.write_str("zf"),
            Self::Mmse => f.write_str("mmse"),
            Self::Mf => f.write_str("mf"),
            Self::Ml => f.write_str("ml"),
            Self::KBest(k) => write!(f, "kbest({k})"),
            Self::AttDet(p) => write!(f, "attdet({})", p.display()),
        }
    }
}

/// When a point stops drawing REs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stopping {
    /// Each detector stops on its own error count.
    #[default]
    Independent,
    /// All detectors at an SNR run until every one has reached its error
    /// count, so they are compared on exactly the same REs.
    Shared,
}

fn default_min_bit_errors() -> u64 {
    200
}
fn default_max_re() -> u64 {
    1_000_000
}
fn default_chunk() -> usize {
    512
}

/// Sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub channel: ChannelConfig,
    pub modulation: usize,
    pub snr_grid_db: Vec<f64>,
    pub detectors: Vec<DetectorSpec>,
    #[serde(default = "default_min_bit_errors")]
    pub min_bit_errors: u64,
    #[serde(default = "default_max_re")]
    pub max_re_per_point: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// REs per work item.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub stopping: Stopping,
    /// Frame layout handed to smoothing attention detectors.
    #[serde(default)]
    pub grid: Option<GridShape>,
}

impl SimConfig {
    pub fn new(channel: ChannelConfig, modulation: usize, snr_grid_db: Vec<f64>, detectors: Vec<DetectorSpec>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            channel,
            modulation,
            snr_grid_db,
            detectors,
            min_bit_errors: default_min_bit_errors(),
            max_re_per_point: default_max_re(),
            seed: 0,
            output: None,
            chunk_size: default_chunk(),
            stopping: Stopping::default(),
            grid: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read_config(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.channel.validate()?;
        Constellation::<f64>::new(self.modulation)?;
        if self.snr_grid_db.is_empty() {
            return Err(Error::Config("snr_grid_db must not be empty".into()));
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) || self.snr_grid_db.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("snr_grid_db must be finite and strictly ascending".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::Config("detectors must not be empty".into()));
        }
        if self.min_bit_errors == 0 || self.max_re_per_point == 0 || self.chunk_size == 0 {
            return Err(Error::Config("min_bit_errors, max_re_per_point and chunk_size must be at least 1".into()));
        }
        if let Some(g) = self.grid {
            if g.size() == 0 || !self.chunk_size.is_multiple_of(g.size()) {
                return Err(Error::Config("chunk_size must be a multiple of the grid size".into()));
            }
        }
        Ok(())
    }
}

/// Training run file: architecture, training knobs and an optional gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub schema_version: u32,
    #[serde(default)]
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Fail with the gate exit code if the final held-out BER exceeds this.
    #[serde(default)]
    pub max_final_ber: Option<f64>,
}

impl TrainFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        check_schema(cfg.schema_version)?;
        cfg.arch.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read_config(path.as_ref())?)
    }
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Config(format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})")));
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub const CONFIG_SCHEMA: &str = r#"# attdet configuration schema, version 1 (TOML, unknown keys are rejected)

## sweep / eval
schema_version = 1                 # required
modulation = 16                    # 4, 16 or 64
snr_grid_db = [4.0, 8.0, 12.0]     # finite, strictly ascending
detectors = ["zf", "mmse", "mf", "ml", "kbest(16)", "attdet(model.ck)"]
min_bit_errors = 200               # stop a point after this many bit errors
max_re_per_point = 1000000         # ... or after this many REs
seed = 0
output = "ber.csv"                 # optional; columns detector,snr_db,bit_errors,bits_counted,ber,re_counted,seed
chunk_size = 512                   # REs per work item
stopping = "independent"           # or "shared": all detectors run on the same REs
grid = { rows = 3, cols = 3 }      # optional frame layout for smoothing models

[channel]
n_rx = 8
n_tx = 2
model = "kronecker"                # "iid", "kronecker" or "awgn"
rho_tx = 0.8                       # 0 <= rho < 1
rho_rx = 0.0
csi_error_var = 0.0                # variance of the additive CSI error

## train
schema_version = 1
max_final_ber = 0.05               # optional gate on the last held-out BER

[arch]                             # all optional
d = 64
n_heads = 4
n_layers = 4
max_bits = 6
share_qk = false
share_layer_params = false
score_smoothing = false
residual = true

[train]                            # all optional
samples_total = 6000000
batch_size = 256
lr = 0.001
# lr_final = 1e-5                  # optional cosine annealing target
snr_range_db = [0.0, 20.0]
modulations = [16]
eval_every = 100                   # steps between held-out evaluations
eval_snr_db = 10.0
eval_samples = 2000
eval_order = 16                    # defaults to the first training order
seed = 0
sub_batch = 32                     # REs per gradient work item
# grid = { rows = 3, cols = 3 }    # frames for smoothing models; batch_size and sub_batch must be multiples
log_path = "train.csv"
checkpoint_path = "model.ck"
checkpoint_every = 1000            # steps
divergence_factor = 10.0
divergence_patience = 100
channel = { n_rx = 8, n_tx = 2, model = "iid" }
"#;

/// Why a point stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MinErrors,
    MaxRe,
}

/// One (detector, SNR) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub detector: String,
    pub snr_db: f64,
    pub bit_errors: u64,
    pub bits_counted: u64,
    pub ber: f64,
    pub re_counted: u64,
    pub seed: u64,
    pub stop: StopReason,
}

impl BerPoint {
    pub fn csv_line(&self) -> String {
        let name = if self.detector.contains([',', '"']) {
            format!("\"{}\"", self.detector.replace('"', "\"\""))
        } else {
            self.detector.clone()
        };
        format!(
            "{},{},{},{},{:e},{},{}",
            name, self.snr_db, self.bit_errors, self.bits_counted, self.ber, self.re_counted, self.seed
        )
    }
}

pub fn write_csv<W: Write>(points: &[BerPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        writeln!(w, "{}", p.csv_line())?;
    }
    Ok(())
}

pub fn save_csv(points: &[BerPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(points, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Instantiates a detector for the given scenario. Attention checkpoints
/// are checked against the receive-antenna count and the modulation.
pub fn build_detector(spec: &DetectorSpec, cfg: &SimConfig) -> Result<Box<dyn Detector<f64>>> {
    let clip = DEFAULT_LLR_CLIP;
    Ok(match spec {
        DetectorSpec::Zf => Box::new(Zf { llr_clip: clip }),
        DetectorSpec::Mmse => Box::new(Mmse { llr_clip: clip }),
        DetectorSpec::Mf => Box::new(MatchedFilter { llr_clip: clip }),
        DetectorSpec::Ml => Box::new(Ml { llr_clip: clip, enumeration_cap: DEFAULT_ENUMERATION_CAP }),
        DetectorSpec::KBest(k) => Box::new(KBest { cfg: KBestConfig::new(*k) }),
        DetectorSpec::AttDet(path) => {
            let params = load_checkpoint(path)?;
            if params.n_rx() != cfg.channel.n_rx {
                return Err(Error::CheckpointMismatch(format!(
                    "{} was trained for n_rx={}, scenario has n_rx={}",
                    path.display(),
                    params.n_rx(),
                    cfg.channel.n_rx
                )));
            }
            let bps = cfg.modulation.trailing_zeros() as usize;
            if bps > params.arch().max_bits {
                return Err(Error::CheckpointMismatch(format!(
                    "{} emits {} bits per layer, modulation needs {bps}",
                    path.display(),
                    params.arch().max_bits
                )));
            }
            let mut det = AttDetDetector::new(params, spec.to_string());
            det.grid = cfg.grid;
            Box::new(det)
        }
    })
}

fn point_stream(seed: u64, snr_db: f64, chunk: u64) -> crate::rng::SimRng {
    substream(seed, &[snr_db.to_bits(), chunk])
}

fn draw_chunk(
    sampler: &ChannelSampler<f64>,
    c: &Constellation<f64>,
    noise_var: f64,
    seed: u64,
    snr_db: f64,
    chunk: u64,
    len: usize,
) -> Vec<ReSample<f64>> {
    let mut rng = point_stream(seed, snr_db, chunk);
    (0..len).map(|_| sample_re(sampler, c, noise_var, &mut rng)).collect()
}

fn count_errors(det: &dyn Detector<f64>, res: &[ReSample<f64>], c: &Constellation<f64>) -> Result<u64> {
    let obs: Vec<Observation<'_, f64>> =
        res.iter().map(|r| Observation { h_est: &r.channel.h_est, y: &r.y, noise_var: r.channel.noise_var }).collect();
    let out = det.detect_batch(&obs, c)?;
    Ok(out.iter().zip(res).map(|(d, r)| d.flat_bits().iter().zip(&r.bits).filter(|(a, b)| a != b).count() as u64).sum())
}

#[derive(Default, Clone, Copy)]
struct Tally {
    errors: u64,
    res: u64,
    done: bool,
}

/// Measures several detectors at one SNR on common REs.
///
/// Chunks are processed in waves of one chunk per worker and accumulated in
/// chunk order; a detector stops after the first chunk at which it reaches
/// `min_bit_errors` (or, with [`Stopping::Shared`], when all detectors have)
/// or `max_re_per_point`. Later chunks of the same wave are discarded, so
/// the result is the same for any worker count.
pub fn run_point_set(cfg: &SimConfig, detectors: &[&dyn Detector<f64>], snr_db: f64) -> Result<Vec<BerPoint>> {
    cfg.validate()?;
    let sampler = ChannelSampler::<f64>::new(&cfg.channel)?;
    let c = Constellation::<f64>::new(cfg.modulation)?;
    let noise_var = snr_to_noise_var(snr_db, cfg.channel.n_tx);
    let bits_per_re = (cfg.channel.n_tx * c.bits_per_symbol()) as u64;
    let chunk = cfg.chunk_size as u64;
    let n_chunks = cfg.max_re_per_point.div_ceil(chunk);
    let wave = rayon::current_num_threads().max(1) as u64;

    let mut tally = vec![Tally::default(); detectors.len()];
    let mut next = 0u64;
    while next < n_chunks && tally.iter().any(|t| !t.done) {
        let ids: Vec<u64> = (next..(next + wave).min(n_chunks)).collect();
        next += ids.len() as u64;
        let active: Vec<usize> = (0..detectors.len()).filter(|&d| !tally[d].done).collect();
        let results: Vec<Result<(usize, Vec<u64>)>> = ids
            .par_iter()
            .map(|&id| {
                let len = (cfg.max_re_per_point - id * chunk).min(chunk) as usize;
                let res = draw_chunk(&sampler, &c, noise_var, cfg.seed, snr_db, id, len);
                let errs = active.iter().map(|&d| count_errors(detectors[d], &res, &c)).collect::<Result<_>>()?;
                Ok((len, errs))
            })
            .collect();
        for r in results {
            let (len, errs) = r?;
            for (&d, e) in active.iter().zip(errs) {
                let t = &mut tally[d];
                if t.done {
                    continue;
                }
                t.errors += e;
                t.res += len as u64;
            }
            let reached: Vec<bool> = tally.iter().map(|t| t.errors >= cfg.min_bit_errors).collect();
            let all = reached.iter().all(|&r| r);
            for (t, &r) in tally.iter_mut().zip(&reached) {
                let stop = match cfg.stopping {
                    Stopping::Independent => r,
                    Stopping::Shared => all,
                };
                if stop || t.res >= cfg.max_re_per_point {
                    t.done = true;
                }
            }
            if tally.iter().all(|t| t.done) {
                break;
            }
        }
    }
    Ok(detectors
        .iter()
        .zip(&tally)
        .map(|(d, t)| {
            let bits = t.res * bits_per_re;
            BerPoint {
                detector: d.name(),
                snr_db,
                bit_errors: t.errors,
                bits_counted: bits,
                ber: t.errors as f64 / bits as f64,
                re_counted: t.res,
                seed: cfg.seed,
                stop: if t.errors >= cfg.min_bit_errors { StopReason::MinErrors } else { StopReason::MaxRe },
            }
        })
        .collect())
}

/// Measures one detector at one SNR.
pub fn run_point(cfg: &SimConfig, detector: &dyn Detector<f64>, snr_db: f64) -> Result<BerPoint> {
    Ok(run_point_set(cfg, &[detector], snr_db)?.pop().expect("one detector"))
}

/// Full detector x SNR grid, detector-major within each SNR. Writes the CSV
/// when `cfg.output` is set.
pub fn run_sweep(cfg: &SimConfig) -> Result<Vec<BerPoint>> {
    cfg.validate()?;
    let dets: Vec<Box<dyn Detector<f64>>> =
        cfg.detectors.iter().map(|s| build_detector(s, cfg)).collect::<Result<_>>()?;
    let refs: Vec<&dyn Detector<f64>> = dets.iter().map(|d| d.as_ref()).collect();
    let mut points = Vec::with_capacity(refs.len() * cfg.snr_grid_db.len());
    for &snr in &cfg.snr_grid_db {
        points.extend(run_point_set(cfg, &refs, snr)?);
    }
    if let Some(path) = &cfg.output {
        save_csv(&points, path)?;
    }
    Ok(points)
}

/// SNR at which a BER curve crosses `target`, interpolating linearly in
/// `log10(BER)` between adjacent grid points. `None` if the curve never
/// brackets the target or a bracketing point has no errors.
pub fn snr_at_ber(points: &[(f64, f64)], target: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((s0, b0), (s1, b1)) = (w[0], w[1]);
        if b0 >= target && b1 <= target && b0 > 0.0 && b1 > 0.0 {
            if b0 == b1 {
                return Some(s0);
            }
            let t = (b0.log10() - target.log10()) / (b0.log10() - b1.log10());
            Some(s0 + t * (s1 - s0))
        } else {
            None
        }
    })
}

/// `(snr_db, ber)` pairs of one detector, in grid order.
pub fn curve(points: &[BerPoint], detector: &str) -> Vec<(f64, f64)> {
    points.iter().filter(|p| p.detector == detector).map(|p| (p.snr_db, p.ber)).collect()
}
