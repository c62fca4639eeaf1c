//! Multiclass-plus-Other versus multilabel on a corpus with non-target languages.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::synth::{synth_corpus, SynthConfig, SynthCorpus};
use crate::error::Result;
use crate::inference::DEFAULT_THRESHOLD;
use crate::models::{Architecture, HeadKind, Model, ModelConfig};
use crate::training::{train, TrainConfig, TrainHistory};

/// Everything that shapes one comparison besides the architecture and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpensetConfig {
    pub corpus: SynthConfig,
    pub width_multiplier: f64,
    /// Shared by both runs; the loss is set per head.
    pub train: TrainConfig,
    pub threshold: f32,
    /// Also score both models on the closed (targets-only) test split.
    pub closed_control: bool,
    /// Worker threads for evaluation; 0 uses the global pool.
    pub threads: usize,
}

impl Default for OpensetConfig {
    fn default() -> Self {
        Self {
            corpus: SynthConfig::default(),
            width_multiplier: 1.0,
            train: TrainConfig {
                batch_size: 32,
                max_epochs: 30,
                samples_per_class_per_epoch: 24,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            threshold: DEFAULT_THRESHOLD,
            closed_control: true,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyResult {
    pub head: HeadKind,
    pub open: EvalReport,
    pub closed: Option<EvalReport>,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Serialize)]
pub struct OpensetReport {
    pub architecture: Architecture,
    pub seed: u64,
    pub multiclass: StrategyResult,
    pub multilabel: StrategyResult,
    /// `multiclass.open.err - multilabel.open.err`; positive favours multilabel.
    pub delta: f64,
}

impl OpensetReport {
    pub fn to_table(&self) -> String {
        let closed = |r: &StrategyResult| r.closed.as_ref().map_or("-".to_string(), |c| format!("{:.2}", c.err));
        let mut s = format!(
            "{} seed {}\n{:<24} {:>10} {:>10} {:>6}\n",
            self.architecture, self.seed, "strategy", "open err", "closed err", "best"
        );
        for r in [&self.multiclass, &self.multilabel] {
            s += &format!(
                "{:<24} {:>10.2} {:>10} {:>6}\n",
                r.head.as_str(),
                r.open.err,
                closed(r),
                r.history.best_epoch
            );
        }
        s += &format!("delta (multiclass - multilabel) {:+.2}\n", self.delta);
        s
    }
}

fn run_strategy(
    corpus: &SynthCorpus,
    architecture: Architecture,
    head: HeadKind,
    seed: u64,
    cfg: &OpensetConfig,
) -> Result<StrategyResult> {
    let model = Model::build(
        ModelConfig::new(architecture, corpus.languages.len(), head)
            .with_languages(corpus.languages.clone())
            .with_width(cfg.width_multiplier)
            .with_seed(seed),
    )?;
    let tcfg = TrainConfig {
        seed,
        loss: TrainConfig::for_head(head).loss,
        ..cfg.train.clone()
    };
    let (model, history) = train(model, &corpus.train, &corpus.val, &tcfg)?;
    let open = evaluate(&model, &corpus.test_open, &corpus.languages, cfg.threshold, cfg.threads)?;
    let closed = if cfg.closed_control {
        Some(evaluate(&model, &corpus.test_closed, &corpus.languages, cfg.threshold, cfg.threads)?)
    } else {
        None
    };
    Ok(StrategyResult {
        head,
        open,
        closed,
        history,
    })
}

/// Generates the corpus for `seed` under `work_dir`, trains one model per
/// strategy with identical seeds and budgets, and scores both.
pub fn openset_experiment(
    architecture: Architecture,
    seed: u64,
    cfg: &OpensetConfig,
    work_dir: impl AsRef<Path>,
) -> Result<OpensetReport> {
    let corpus_cfg = SynthConfig {
        seed,
        ..cfg.corpus.clone()
    };
    let corpus = synth_corpus(work_dir.as_ref().join(format!("corpus-{seed}")), &corpus_cfg)?;
    openset_on_corpus(&corpus, architecture, seed, cfg)
}

/// [`openset_experiment`] on an existing corpus.
pub fn openset_on_corpus(
    corpus: &SynthCorpus,
    architecture: Architecture,
    seed: u64,
    cfg: &OpensetConfig,
) -> Result<OpensetReport> {
    let multiclass = run_strategy(corpus, architecture, HeadKind::MulticlassPlusOther, seed, cfg)?;
    let multilabel = run_strategy(corpus, architecture, HeadKind::Multilabel, seed, cfg)?;
    Ok(OpensetReport {
        architecture,
        seed,
        delta: multiclass.open.err - multilabel.open.err,
        multiclass,
        multilabel,
    })
}

/// Median of a non-empty sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
