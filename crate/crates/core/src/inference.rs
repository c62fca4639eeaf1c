//! Clip-level prediction and the decision rules.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::audio::{fit_center, load_wav, samples_for, AudioClip, DatasetManifest, Label, CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::features::{log_mel, LogMelSpectrogram};
use crate::models::{features_batch, HeadKind, Model};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f32 = 0.5;
/// Hop between sliding windows, in seconds.
pub const WINDOW_HOP_SECONDS: f64 = 5.0;
const WINDOWS_PER_FORWARD: usize = 8;

/// A clip-level outcome and the activations it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub outcome: Label,
    pub activations: Vec<f32>,
    pub head: HeadKind,
}

/// Turns per-unit activations into an outcome.
///
/// Multilabel: the argmax language if its activation is at least `threshold`,
/// otherwise Other. Multiclass: the argmax unit; with an explicit Other unit
/// (the last one) that unit maps to Other. Ties go to the lowest index.
pub fn decide(activations: &[f32], head: HeadKind, threshold: f32) -> Result<Decision> {
    if activations.is_empty() {
        return Err(Error::InvalidInput("decide on empty activations".into()));
    }
    if head == HeadKind::MulticlassPlusOther && activations.len() < 2 {
        return Err(Error::InvalidInput(
            "a multiclass_plus_other head needs at least one language unit and the Other unit".into(),
        ));
    }
    let mut best = 0;
    for (i, &a) in activations.iter().enumerate() {
        if a > activations[best] {
            best = i;
        }
    }
    let outcome = match head {
        HeadKind::Multilabel if activations[best] < threshold => Label::Other,
        HeadKind::MulticlassPlusOther if best == activations.len() - 1 => Label::Other,
        _ => Label::Language(best),
    };
    Ok(Decision {
        outcome,
        activations: activations.to_vec(),
        head,
    })
}

/// Anything that maps a `[N, 64, T]` feature batch to per-clip activations.
pub trait Classifier: Sync {
    fn head(&self) -> HeadKind;
    fn activations(&self, x: &Tensor<f32>) -> Result<Vec<Vec<f32>>>;
}

impl Classifier for Model<f32> {
    fn head(&self) -> HeadKind {
        Model::head(self)
    }

    fn activations(&self, x: &Tensor<f32>) -> Result<Vec<Vec<f32>>> {
        Model::activations(self, x)
    }
}

/// Start offsets (in samples) of the 10 s windows covering a clip.
///
/// Clips up to 10 s get a single window at 0 (they are center-fitted). Longer
/// clips get windows every 5 s plus, if needed, one final window flush with
/// the end of the clip.
pub fn window_offsets(num_samples: usize) -> Vec<usize> {
    let win = samples_for(CLIP_SECONDS);
    let hop = samples_for(WINDOW_HOP_SECONDS);
    if num_samples <= win {
        return vec![0];
    }
    let mut offsets: Vec<usize> = (0..).map(|i| i * hop).take_while(|&o| o + win <= num_samples).collect();
    let last = num_samples - win;
    if *offsets.last().expect("at least the window at 0") < last {
        offsets.push(last);
    }
    offsets
}

/// The 10 s windows [`predict_clip`] feeds to the model.
pub fn clip_windows(clip: &AudioClip) -> Result<Vec<AudioClip>> {
    if clip.len() <= samples_for(CLIP_SECONDS) {
        return Ok(vec![fit_center(clip, CLIP_SECONDS)?]);
    }
    let win = samples_for(CLIP_SECONDS);
    window_offsets(clip.len())
        .into_iter()
        .map(|o| AudioClip::from_samples(clip.samples()[o..o + win].to_vec()))
        .collect()
}

/// Wall-clock split of one prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub features: Duration,
    pub forward: Duration,
}

/// Per-window activations of `clip`, in window order.
pub fn window_activations<C: Classifier + ?Sized>(model: &C, clip: &AudioClip) -> Result<Vec<Vec<f32>>> {
    let mut times = StageTimes::default();
    window_activations_timed(model, clip, &mut times)
}

fn window_activations_timed<C: Classifier + ?Sized>(
    model: &C,
    clip: &AudioClip,
    times: &mut StageTimes,
) -> Result<Vec<Vec<f32>>> {
    let t0 = Instant::now();
    let specs = clip_windows(clip)?
        .iter()
        .map(log_mel)
        .collect::<Result<Vec<LogMelSpectrogram>>>()?;
    times.features += t0.elapsed();
    let t1 = Instant::now();
    let mut acts = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(WINDOWS_PER_FORWARD) {
        let refs: Vec<&LogMelSpectrogram> = chunk.iter().collect();
        acts.extend(model.activations(&features_batch(&refs)?)?);
    }
    times.forward += t1.elapsed();
    Ok(acts)
}

fn average(acts: &[Vec<f32>]) -> Vec<f32> {
    let k = acts[0].len();
    (0..k)
        .map(|j| (acts.iter().map(|a| a[j] as f64).sum::<f64>() / acts.len() as f64) as f32)
        .collect()
}

/// Sliding-window prediction: post-nonlinearity activations are averaged over
/// all windows, then [`decide`] is applied to the average.
pub fn predict_clip<C: Classifier + ?Sized>(model: &C, clip: &AudioClip, threshold: f32) -> Result<Decision> {
    let mut times = StageTimes::default();
    predict_clip_timed(model, clip, threshold, &mut times)
}

/// [`predict_clip`] that also accumulates the time spent per stage.
pub fn predict_clip_timed<C: Classifier + ?Sized>(
    model: &C,
    clip: &AudioClip,
    threshold: f32,
    times: &mut StageTimes,
) -> Result<Decision> {
    let acts = window_activations_timed(model, clip, times)?;
    decide(&average(&acts), model.head(), threshold)
}

/// Predicts every manifest entry, preserving manifest order. Failures are
/// recorded per clip. `threads == 0` uses the global pool.
pub fn predict_batch<C: Classifier + ?Sized>(
    model: &C,
    manifest: &DatasetManifest,
    threshold: f32,
    threads: usize,
) -> Result<Vec<(PathBuf, Result<Decision>)>> {
    let run = || {
        manifest
            .entries
            .par_iter()
            .map(|e| {
                let d = load_wav(&e.path).and_then(|clip| predict_clip(model, &clip, threshold));
                (e.path.clone(), d)
            })
            .collect()
    };
    if threads == 0 {
        return Ok(run());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {threads}-thread pool: {e}")))?;
    Ok(pool.install(run))
}

/// `<path>\t<outcome>\t<comma-separated activations>`.
pub fn format_prediction(path: &std::path::Path, decision: &Decision, languages: &[String]) -> String {
    let acts: Vec<String> = decision.activations.iter().map(|a| format!("{a:.6}")).collect();
    format!("{}\t{}\t{}", path.display(), decision.outcome.name(languages), acts.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ml(a: &[f32]) -> Label {
        decide(a, HeadKind::Multilabel, DEFAULT_THRESHOLD).unwrap().outcome
    }

    #[test]
    fn multilabel_rules() {
        assert_eq!(ml(&[0.9, 0.3, 0.2]), Label::Language(0));
        assert_eq!(ml(&[0.4, 0.49, 0.3]), Label::Other);
        assert_eq!(ml(&[0.7, 0.7]), Label::Language(0));
        assert_eq!(ml(&[0.2, 0.5]), Label::Language(1));
        assert_eq!(ml(&[0.0; 3]), Label::Other);
    }

    #[test]
    fn multiclass_rules() {
        let d = decide(&[0.2, 0.5, 0.3], HeadKind::Multiclass, 0.5).unwrap();
        assert_eq!(d.outcome, Label::Language(1));
        // below threshold is irrelevant for softmax heads
        assert_eq!(decide(&[0.3, 0.3, 0.4], HeadKind::Multiclass, 0.5).unwrap().outcome, Label::Language(2));
        assert_eq!(decide(&[0.2, 0.3, 0.5], HeadKind::MulticlassPlusOther, 0.5).unwrap().outcome, Label::Other);
        assert_eq!(decide(&[0.5, 0.5], HeadKind::MulticlassPlusOther, 0.5).unwrap().outcome, Label::Language(0));
        assert!(matches!(decide(&[], HeadKind::Multiclass, 0.5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn offsets() {
        let s = |x: f64| samples_for(x);
        assert_eq!(window_offsets(s(3.0)), [0]);
        assert_eq!(window_offsets(s(10.0)), [0]);
        assert_eq!(window_offsets(s(20.0)), [0, s(5.0), s(10.0)]);
        assert_eq!(window_offsets(s(12.0)), [0, s(2.0)]);
        assert_eq!(window_offsets(s(17.5)), [0, s(5.0), s(7.5)]);
    }

    #[test]
    fn appended_silence_only_adds_windows() {
        let s = |x: f64| samples_for(x);
        let base = window_offsets(s(21.0));
        let longer = window_offsets(s(22.0));
        // every full-hop window of the short clip reappears
        for o in base.iter().filter(|&&o| o % s(5.0) == 0) {
            assert!(longer.contains(o));
        }
    }
}
