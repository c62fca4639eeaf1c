//! Balanced-epoch training with augmentation, Adam and early stopping.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{fit_center, fit_to_duration, load_wav, AudioClip, DatasetManifest, FitMode, Label, ManifestEntry, CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::features::{augment, log_mel, AugmentationConfig, LogMelSpectrogram};
use crate::inference::{decide, DEFAULT_THRESHOLD};
use crate::models::{features_batch, save_weights, HeadKind, Mode, Model, Param};
use crate::tensor::{is_grad_enabled, no_grad, Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CategoricalCe,
    BinaryCe,
}

impl LossKind {
    pub fn for_head(head: HeadKind) -> Self {
        if head.is_multilabel() {
            LossKind::BinaryCe
        } else {
            LossKind::CategoricalCe
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub samples_per_class_per_epoch: usize,
    /// Where per-epoch and best checkpoints are written, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            loss: LossKind::CategoricalCe,
            seed: 0,
            augmentation: AugmentationConfig::default(),
            samples_per_class_per_epoch: 100,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the loss that matches `head`.
    pub fn for_head(head: HeadKind) -> Self {
        Self {
            loss: LossKind::for_head(head),
            ..Self::default()
        }
    }

    pub fn validate(&self, head: HeadKind) -> Result<()> {
        if self.loss != LossKind::for_head(head) {
            return Err(Error::Config(format!(
                "loss {:?} does not match head {head} (categorical_ce for multiclass heads, binary_ce for multilabel)",
                self.loss
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 (batch norm needs it)".into()));
        }
        if self.max_epochs == 0 || self.samples_per_class_per_epoch == 0 {
            return Err(Error::Config("max_epochs and samples_per_class_per_epoch must be positive".into()));
        }
        if !(1e-5..=1e-3).contains(&self.lr) {
            log::warn!("lr {} is outside the usual [1e-5, 1e-3] range", self.lr);
        }
        if !(32..=128).contains(&self.batch_size) {
            log::info!("batch_size {} is outside the usual [32, 128] range", self.batch_size);
        }
        self.augmentation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
}

/// Draws one epoch with exactly `per_class` entries for every class.
///
/// Classes are the target languages plus, when `include_other`, the pool of
/// non-target entries. A class with `n` files contributes `per_class / n`
/// complete shuffled passes plus a remainder drawn without replacement, so
/// every file appears at least `floor(per_class / n)` times. The result is
/// shuffled.
pub fn balanced_epoch<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    languages: &[String],
    include_other: bool,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<ManifestEntry>> {
    let l = languages.len();
    let mut pools: Vec<Vec<&ManifestEntry>> = vec![Vec::new(); l + 1];
    for e in &manifest.entries {
        match e.label {
            Label::Language(i) if i < l => pools[i].push(e),
            Label::Language(i) => {
                return Err(Error::Config(format!(
                    "{} has language index {i} but only {l} languages are configured",
                    e.path.display()
                )))
            }
            Label::Other => pools[l].push(e),
        }
    }
    if !include_other {
        pools.pop();
    }
    for (i, p) in pools.iter().enumerate() {
        if p.is_empty() {
            let name = Label::from_class_index(i, l).name(languages);
            return Err(Error::Config(format!("training manifest has no entries for class `{name}`")));
        }
    }
    let mut out = Vec::with_capacity(pools.len() * per_class);
    for pool in &pools {
        let mut drawn = 0;
        while drawn < per_class {
            let mut pass: Vec<&ManifestEntry> = pool.clone();
            pass.shuffle(rng);
            let take = pass.len().min(per_class - drawn);
            out.extend(pass[..take].iter().map(|&e| e.clone()));
            drawn += take;
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Mean categorical cross-entropy of `[N, K]` logits against class indices,
/// in the log-sum-exp form.
pub fn categorical_ce<T: Float>(logits: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
        return Err(Error::Shape(format!(
            "categorical_ce: logits {s:?} with {} targets",
            targets.len()
        )));
    }
    let (n, k) = (s[0], s[1]);
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidInput(format!("target class {bad} out of range for {k} logits")));
    }
    let mut probs = vec![T::zero(); n * k];
    let mut total = 0.0f64;
    for (r, row) in logits.data().chunks(k).enumerate() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = row.iter().map(|&v| (v - m).as_f64().exp()).sum::<f64>().ln() + m.as_f64();
        total += lse - row[targets[r]].as_f64();
        for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
            *p = T::of((v.as_f64() - lse).exp());
        }
    }
    let targets = targets.to_vec();
    Tensor::from_op("categorical_ce", vec![], vec![T::of(total / n as f64)], vec![logits.clone()], move |ctx| {
        let g = ctx.grad[0] / T::of(n as f64);
        let mut d: Vec<T> = probs.iter().map(|&p| p * g).collect();
        for (r, &t) in targets.iter().enumerate() {
            d[r * k + t] -= g;
        }
        Ok(vec![Some(d)])
    })
}

/// Mean binary cross-entropy with logits over all `N·L` elements. Targets
/// must be 0 or 1; all-zero rows are allowed.
pub fn binary_ce<T: Float>(logits: &Tensor<T>, targets: &[T]) -> Result<Tensor<T>> {
    if logits.rank() != 2 || logits.numel() != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "binary_ce: logits {:?} with {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    if targets.iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(Error::InvalidInput("binary_ce targets must be 0 or 1".into()));
    }
    let count = targets.len() as f64;
    let total: f64 = logits
        .data()
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            let (z, y) = (z.as_f64(), y.as_f64());
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum();
    let targets = targets.to_vec();
    Tensor::from_op("binary_ce", vec![], vec![T::of(total / count)], vec![logits.clone()], move |ctx| {
        let g = ctx.grad[0] / T::of(count);
        let z = ctx.inputs[0].data();
        Ok(vec![Some(
            z.iter()
                .zip(&targets)
                .map(|(&z, &y)| (crate::tensor::sigmoid_scalar(z) - y) * g)
                .collect(),
        )])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Parameters without a
/// gradient are treated as having a zero gradient. Gradients are cleared.
pub fn adam_step<T: Float>(params: &mut [&mut Param<T>], hp: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("adam step numbering starts at 1".into()));
    }
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for p in params.iter_mut() {
        let grad = p.value.grad();
        let old = p.value.data();
        let mut new = Vec::with_capacity(old.len());
        for i in 0..old.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i].as_f64());
            let m = hp.beta1 * p.adam_m[i].as_f64() + (1.0 - hp.beta1) * g;
            let v = hp.beta2 * p.adam_v[i].as_f64() + (1.0 - hp.beta2) * g * g;
            p.adam_m[i] = T::of(m);
            p.adam_v[i] = T::of(v);
            new.push(T::of(old[i].as_f64() - hp.lr * (m / c1) / ((v / c2).sqrt() + hp.eps)));
        }
        p.set_data(new)?;
    }
    Ok(())
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// What a model is trained to output for one label.
#[derive(Debug, Clone, Copy)]
struct TargetCoding {
    head: HeadKind,
    languages: usize,
}

impl TargetCoding {
    fn accepts(&self, label: Label) -> bool {
        !(self.head == HeadKind::Multiclass && label == Label::Other)
    }

    fn loss(&self, logits: &Tensor<f32>, labels: &[Label]) -> Result<Tensor<f32>> {
        if self.head.is_multilabel() {
            let mut y = vec![0.0f32; labels.len() * self.languages];
            for (r, l) in labels.iter().enumerate() {
                if let Label::Language(i) = l {
                    y[r * self.languages + i] = 1.0;
                }
            }
            binary_ce(logits, &y)
        } else {
            let t: Vec<usize> = labels.iter().map(|l| l.class_index(self.languages)).collect();
            categorical_ce(logits, &t)
        }
    }
}

fn load_clips(entries: &[ManifestEntry]) -> Result<HashMap<PathBuf, Arc<AudioClip>>> {
    let mut paths: Vec<&Path> = entries.iter().map(|e| e.path.as_path()).collect();
    paths.sort();
    paths.dedup();
    paths
        .par_iter()
        .map(|p| Ok((p.to_path_buf(), Arc::new(load_wav(p)?))))
        .collect()
}

/// Batches of at most `size`; a trailing single example joins the previous batch.
fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

struct ValSet {
    specs: Vec<LogMelSpectrogram>,
    labels: Vec<Label>,
}

fn evaluate(model: &Model<f32>, coding: TargetCoding, val: &ValSet, batch: usize) -> Result<(f64, f64)> {
    debug_assert_eq!(model.mode(), Mode::Eval);
    let mut loss = 0.0;
    let mut wrong = 0usize;
    no_grad(|| -> Result<()> {
        for r in batch_ranges(val.specs.len(), batch) {
            let refs: Vec<&LogMelSpectrogram> = val.specs[r.clone()].iter().collect();
            let logits = model.forward(&features_batch(&refs)?)?;
            loss += coding.loss(&logits, &val.labels[r.clone()])?.item()? as f64 * r.len() as f64;
            let acts = model.head().activate(&logits)?;
            for (row, &label) in acts.data().chunks(model.output_units()).zip(&val.labels[r]) {
                if decide(row, model.head(), DEFAULT_THRESHOLD)?.outcome != label {
                    wrong += 1;
                }
            }
        }
        Ok(())
    })?;
    let n = val.specs.len() as f64;
    Ok((loss / n, 100.0 * wrong as f64 / n))
}

fn diverged(epoch: usize, batch: usize, lr: f64, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            batch,
            lr,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains `model` and returns it as it was after the best validation epoch.
pub fn train(
    model: Model<f32>,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory)> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    mut model: Model<f32>,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainHistory)> {
    let head = model.head();
    cfg.validate(head)?;
    if !is_grad_enabled() {
        return Err(Error::Usage("train called inside a no-grad scope".into()));
    }
    let languages = model.config().language_names();
    let coding = TargetCoding {
        head,
        languages: languages.len(),
    };
    let include_other = match head {
        HeadKind::Multiclass => false,
        HeadKind::MulticlassPlusOther => true,
        HeadKind::Multilabel => train_set.entries.iter().any(|e| e.label == Label::Other),
    };
    // fails early on missing classes
    balanced_epoch(train_set, &languages, include_other, 1, &mut ChaCha8Rng::seed_from_u64(0))?;

    let val_entries: Vec<&ManifestEntry> = val_set.entries.iter().filter(|e| coding.accepts(e.label)).collect();
    if val_entries.is_empty() {
        return Err(Error::Config("validation manifest has no usable entries".into()));
    }
    let clips = load_clips(&train_set.entries)?;
    let val = ValSet {
        specs: val_entries
            .par_iter()
            .map(|e| log_mel(&fit_center(&load_wav(&e.path)?, CLIP_SECONDS)?))
            .collect::<Result<_>>()?,
        labels: val_entries.iter().map(|e| e.label).collect(),
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let hp = AdamConfig::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut step = 0u64;

    for epoch in 1..=cfg.max_epochs {
        let entries = balanced_epoch(train_set, &languages, include_other, cfg.samples_per_class_per_epoch, &mut rng)?;
        let seeds: Vec<u64> = entries.iter().map(|_| rng.next_u64()).collect();
        let specs: Vec<LogMelSpectrogram> = entries
            .par_iter()
            .zip(&seeds)
            .map(|(e, &seed)| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let clip = augment(&clips[&e.path], &cfg.augmentation, &mut r)?;
                log_mel(&fit_to_duration(&clip, CLIP_SECONDS, FitMode::RandomSubclip, &mut r)?)
            })
            .collect::<Result<_>>()?;

        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        for (b, r) in batch_ranges(entries.len(), cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&LogMelSpectrogram> = specs[r.clone()].iter().collect();
            let labels: Vec<Label> = entries[r.clone()].iter().map(|e| e.label).collect();
            let loss = features_batch(&refs)
                .and_then(|x| model.forward(&x))
                .and_then(|logits| coding.loss(&logits, &labels))
                .map_err(|e| diverged(epoch, b, cfg.lr, e))?;
            loss.backward().map_err(|e| diverged(epoch, b, cfg.lr, e))?;
            let value = loss.item()? as f64;
            drop(loss);
            step += 1;
            adam_step(&mut model.params_mut(), &hp, step)?;
            loss_sum += value * r.len() as f64;
        }
        model.set_mode(Mode::Eval);

        let (val_loss, val_err) = evaluate(&model, coding, &val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / entries.len() as f64,
            val_loss,
            val_err,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {val_loss:.4} val_err {val_err:.2}",
            record.train_loss
        );
        on_epoch(&record);
        history.epochs.push(record);

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if let Some(dir) = &cfg.checkpoint_dir {
            save_weights(&model, dir.join(format!("epoch_{epoch:03}.slrw")))?;
        }
        if improved {
            best = model.clone();
            if let Some(dir) = &cfg.checkpoint_dir {
                save_weights(&best, dir.join("best.slrw"))?;
            }
        }
        if stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::layers::Module;
    use crate::models::layers::Dense;

    fn entries(counts: &[(Label, usize)]) -> DatasetManifest {
        let mut v = Vec::new();
        for &(label, n) in counts {
            for i in 0..n {
                v.push(ManifestEntry {
                    path: PathBuf::from(format!("{label}_{i}.wav")),
                    label,
                });
            }
        }
        DatasetManifest::new(v)
    }

    fn langs(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    #[test]
    fn balanced_epoch_counts() {
        let m = entries(&[(Label::Language(0), 7), (Label::Language(1), 4), (Label::Language(2), 30)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = balanced_epoch(&m, &langs(3), false, 10, &mut rng).unwrap();
        assert_eq!(e.len(), 30);
        for c in 0..3 {
            assert_eq!(e.iter().filter(|x| x.label == Label::Language(c)).count(), 10);
        }
        let mut per_file: HashMap<&Path, usize> = HashMap::new();
        for x in e.iter().filter(|x| x.label == Label::Language(1)) {
            *per_file.entry(&x.path).or_default() += 1;
        }
        assert_eq!(per_file.len(), 4);
        assert!(per_file.values().all(|&c| c >= 2));
    }

    #[test]
    fn balanced_epoch_other_pool_and_errors() {
        let m = entries(&[(Label::Language(0), 3), (Label::Other, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = balanced_epoch(&m, &langs(1), true, 6, &mut rng).unwrap();
        assert_eq!(e.iter().filter(|x| x.label == Label::Other).count(), 6);
        let none = entries(&[(Label::Language(0), 3)]);
        let err = balanced_epoch(&none, &langs(1), true, 6, &mut rng).unwrap_err();
        assert!(err.to_string().contains("other"));
        let err = balanced_epoch(&none, &langs(2), false, 6, &mut rng).unwrap_err();
        assert!(err.to_string().contains("l1"));
    }

    #[test]
    fn balanced_epoch_is_seeded() {
        let m = entries(&[(Label::Language(0), 5), (Label::Language(1), 9)]);
        let run = |s| balanced_epoch(&m, &langs(2), false, 8, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn categorical_ce_cases() {
        let uniform = Tensor::<f64>::new(&[1, 4], vec![0.3; 4]).unwrap();
        assert!((categorical_ce(&uniform, &[2]).unwrap().item().unwrap() - 4f64.ln()).abs() < 1e-12);
        let sharp = Tensor::<f32>::new(&[1, 2], vec![1000.0, -1000.0]).unwrap();
        assert!(categorical_ce(&sharp, &[0]).unwrap().item().unwrap().abs() < 1e-6);

        let z: Vec<f64> = (0..12).map(|i| (i as f64 * 1.7).sin() * 3.0).collect();
        let t = [2, 0, 1];
        let got = categorical_ce(&Tensor::new(&[3, 4], z.clone()).unwrap(), &t).unwrap().item().unwrap();
        let mut want = 0.0;
        for r in 0..3 {
            let row = &z[r * 4..r * 4 + 4];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[t[r]].exp() / denom).ln();
        }
        assert!((got - want / 3.0).abs() < 1e-8);
    }

    #[test]
    fn binary_ce_cases() {
        let zero = Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert!((binary_ce(&zero, &[0.0; 6]).unwrap().item().unwrap() - 2f64.ln()).abs() < 1e-12);
        let perfect = Tensor::<f32>::new(&[1, 2], vec![1000.0, -1000.0]).unwrap();
        assert!(binary_ce(&perfect, &[1.0, 0.0]).unwrap().item().unwrap().abs() < 1e-6);
        assert!(binary_ce(&zero, &[0.5; 6]).is_err());
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let mut p = Param::<f64>::new("w", &[3], vec![1.0, 1.0, 1.0]).unwrap();
        let g = Tensor::new(&[3], vec![0.5, -2.0, 0.0]).unwrap();
        crate::tensor::sum(&crate::tensor::mul(&p.value, &g).unwrap()).unwrap().backward().unwrap();
        adam_step(&mut [&mut p], &AdamConfig::new(0.01), 1).unwrap();
        let w = p.value.data();
        assert!((w[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
        assert!((w[1] - (1.0 + 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(w[2], 1.0);
        assert!(p.value.grad().is_none());
    }

    #[test]
    fn adam_trajectory_on_a_quadratic() {
        // f(w) = (w - 3)^2, gradient 2(w - 3)
        let hp = AdamConfig::new(0.1);
        let mut p = Param::<f64>::new("w", &[1], vec![0.0]).unwrap();
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3u64 {
            let x = Tensor::new(&[1], vec![3.0]).unwrap();
            let d = crate::tensor::add(&p.value, &crate::tensor::scale(&x, -1.0).unwrap()).unwrap();
            crate::tensor::sum(&crate::tensor::mul(&d, &d).unwrap()).unwrap().backward().unwrap();
            adam_step(&mut [&mut p], &hp, t).unwrap();
            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.value.data()[0] - w).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn small_step_decreases_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = Dense::<f64>::new("fc", 5, 3, &mut rng).unwrap();
        let x = Tensor::new(&[4, 5], (0..20).map(|i| (i as f64 * 0.77).sin()).collect()).unwrap();
        let t = [0, 2, 1, 2];
        let l0 = categorical_ce(&layer.forward(&x).unwrap(), &t).unwrap();
        l0.backward().unwrap();
        adam_step(&mut layer.params_mut(), &AdamConfig::new(1e-5), 1).unwrap();
        let l1 = categorical_ce(&layer.forward(&x).unwrap(), &t).unwrap();
        assert!(l1.item().unwrap() < l0.item().unwrap());
    }

    #[test]
    fn early_stopping_contract() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 1.0), (true, false));
        assert_eq!(s.observe(2, 1.5), (false, false));
        assert_eq!(s.observe(3, 2.0), (false, true));
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        assert_eq!(batch_ranges(9, 4), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(1, 4), vec![0..1]);
    }

    #[test]
    fn loss_head_mismatch_is_rejected() {
        let cfg = TrainConfig::for_head(HeadKind::Multiclass);
        assert!(cfg.validate(HeadKind::Multiclass).is_ok());
        assert!(matches!(cfg.validate(HeadKind::Multilabel), Err(Error::Config(_))));
    }
}
