//! AttDet MIMO detection lab: complex linear algebra, QAM modem, fading
//! channels, classical detectors, the attention detector with hand-written
//! gradients, and a Monte-Carlo BER harness.

pub mod attdet;
pub mod channel;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod modem;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by the harness and the CLI.
pub type Matrix = linalg::ComplexMatrix<f64>;
pub type Model = attdet::ModelParams<f64>;
pub type AttDet = attdet::AttDetDetector<f64>;
pub type QamConstellation = modem::Constellation<f64>;
pub type Sample = training::TrainSample<f64>;
pub type Batch = training::TrainingBatch<f64>;
