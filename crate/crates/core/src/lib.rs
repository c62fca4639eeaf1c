//! Compact spoken-language recognition.
//!
//! The crate covers the whole pipeline of a small on-device language
//! identifier:
//!
//! * [`audio`]: WAV ingestion, 10 s clip fitting and dataset manifests.
//! * [`features`]: the 64-bin log-mel front-end and training-time augmentation.
//! * [`tensor`]: a dense tensor type with reverse-mode differentiation.
//! * [`models`]: TC-ResNet10, TC-ResNet14 and LECAPAT, plus weight files.
//! * [`training`]: balanced epochs, Adam, both loss regimes, early stopping.
//! * [`inference`]: sliding-window prediction and the multiclass / multilabel
//!   decision rules, including rejection of non-target languages as "Other".
//! * [`evalbench`]: error rate, confusion matrices, real-time-factor
//!   benchmarking and the synthetic open-set experiment.

pub mod audio;
pub mod error;
pub mod evalbench;
pub mod features;
pub mod inference;
pub mod models;
pub mod tensor;
pub mod training;

pub use audio::{AudioClip, DatasetManifest, FitMode, Label};
pub use error::{Error, Result};
pub use features::{AugmentationConfig, LogMelSpectrogram};
pub use inference::{decide, predict_clip, Decision};
pub use models::{Architecture, HeadKind, Model, ModelConfig};
pub use tensor::{Float, Tensor};
pub use training::{TrainConfig, TrainHistory};

/// Sample rate every clip is expected to carry.
pub const SAMPLE_RATE: u32 = 16_000;
