//! Metrics, timing and the synthetic open-set experiment.

pub mod bench;
pub mod metrics;
pub mod openset;
pub mod synth;

pub use bench::{benchmark_rtf, hardware_note, time_forward, RtfReport};
pub use metrics::{confusion_matrix, error_rate, evaluate, ConfusionMatrix, EvalReport};
pub use openset::{median, openset_experiment, openset_on_corpus, OpensetConfig, OpensetReport, StrategyResult};
pub use synth::{centroid_oracle_accuracy, synth_corpus, SynthConfig, SynthCorpus};
