use std::time::{Duration, Instant};

use serde::Serialize;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::inference::{predict_clip_timed, Classifier, StageTimes, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RtfReport {
    pub total_audio_s: f64,
    /// Median wall-clock time of one pass over all clips.
    pub total_inference_s: f64,
    /// `total_audio_s / total_inference_s`; larger is faster.
    pub rtf: f64,
    pub feature_s: f64,
    pub forward_s: f64,
    pub repetitions: usize,
    pub hardware: String,
}

impl RtfReport {
    /// Builds a report from per-repetition timings; the median repetition
    /// (by total time) supplies every number.
    pub fn from_repetitions(total_audio_s: f64, reps: &[(Duration, StageTimes)], hardware: String) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::InvalidInput("no timed repetitions".into()));
        }
        let mut sorted: Vec<&(Duration, StageTimes)> = reps.iter().collect();
        sorted.sort_by_key(|r| r.0);
        let (total, stages) = sorted[(sorted.len() - 1) / 2];
        let secs = total.as_secs_f64();
        if secs <= 0.0 || total_audio_s <= 0.0 {
            return Err(Error::InvalidInput("timings and audio duration must be positive".into()));
        }
        Ok(Self {
            total_audio_s,
            total_inference_s: secs,
            rtf: total_audio_s / secs,
            feature_s: stages.features.as_secs_f64(),
            forward_s: stages.forward.as_secs_f64(),
            repetitions: reps.len(),
            hardware,
        })
    }

    pub fn to_table(&self) -> String {
        format!(
            "audio        {:>10.2} s\ninference    {:>10.4} s (median of {})\n  features   {:>10.4} s\n  forward    {:>10.4} s\nrtf          {:>10.1}\nhardware     {}\n",
            self.total_audio_s,
            self.total_inference_s,
            self.repetitions,
            self.feature_s,
            self.forward_s,
            self.rtf,
            self.hardware
        )
    }
}

/// CPU model name and the thread count used for timing.
pub fn hardware_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; 1 thread timed ({cores} available)")
}

/// Times [`crate::inference::predict_clip`] over preloaded clips on a single
/// thread. `warmup` untimed passes precede `repetitions` timed ones.
pub fn benchmark_rtf<C: Classifier + ?Sized>(
    model: &C,
    clips: &[AudioClip],
    repetitions: usize,
    warmup: usize,
) -> Result<RtfReport> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("benchmark needs at least one clip".into()));
    }
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build the timing pool: {e}")))?;
    let audio: f64 = clips.iter().map(AudioClip::duration_s).sum();
    pool.install(|| {
        let pass = |times: &mut StageTimes| -> Result<Duration> {
            let t0 = Instant::now();
            for c in clips {
                std::hint::black_box(predict_clip_timed(model, c, DEFAULT_THRESHOLD, times)?);
            }
            Ok(t0.elapsed())
        };
        for _ in 0..warmup {
            pass(&mut StageTimes::default())?;
        }
        let mut reps = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let mut st = StageTimes::default();
            let total = pass(&mut st)?;
            reps.push((total, st));
        }
        RtfReport::from_repetitions(audio, &reps, hardware_note())
    })
}

/// Median time of `repetitions` single-threaded model forwards on a fixed batch.
pub fn time_forward<C: Classifier + ?Sized>(
    model: &C,
    x: &crate::tensor::Tensor<f32>,
    repetitions: usize,
) -> Result<Duration> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build the timing pool: {e}")))?;
    pool.install(|| {
        model.activations(x)?;
        let mut times = Vec::with_capacity(repetitions.max(1));
        for _ in 0..repetitions.max(1) {
            let t0 = Instant::now();
            std::hint::black_box(model.activations(x)?);
            times.push(t0.elapsed());
        }
        times.sort();
        Ok(times[(times.len() - 1) / 2])
    })
}
