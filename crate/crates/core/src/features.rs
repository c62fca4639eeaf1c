//! Log-mel front-end and training-time augmentation.

use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

pub const N_MELS: usize = 64;
pub const N_FFT: usize = 1024;
/// 25 ms analysis window.
pub const WIN_LENGTH: usize = 400;
/// 10 ms hop.
pub const HOP_LENGTH: usize = 160;
/// Mel energies are clamped here before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided power spectrum, stored sparsely.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_fft: usize,
    /// Per filter: first nonzero bin and the weights from there on.
    rows: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Dense `n_mels × (n_fft/2 + 1)` weight matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|(start, w)| {
                let mut row = vec![0.0; self.n_bins()];
                row[*start..*start + w.len()].copy_from_slice(w);
                row
            })
            .collect()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.rows.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Builds `n_mels` HTK-scale triangular filters spanning 0 Hz to Nyquist.
///
/// Filters peak at 1.0 (no area normalization). Fails if the FFT resolution
/// leaves any filter without a positive weight.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::Config("n_mels must be at least 1".into()));
    }
    if !n_fft.is_power_of_two() {
        return Err(Error::Config(format!("n_fft must be a power of two, got {n_fft}")));
    }
    let sr = sample_rate as f64;
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut rows = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let weights: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * sr / n_fft as f64;
                let rise = (f - lo) / (center - lo);
                let fall = (hi - f) / (hi - center);
                rise.min(fall).max(0.0)
            })
            .collect();
        let Some(first) = weights.iter().position(|&w| w > 0.0) else {
            return Err(Error::Config(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; too many mels for n_fft={n_fft}"
            )));
        };
        let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
        rows.push((first, weights[first..=last].to_vec()));
    }
    Ok(MelFilterbank {
        n_fft,
        rows,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

/// `T × 64` natural-log mel energies, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    n_frames: usize,
    n_mels: usize,
    values: Vec<f32>,
}

impl LogMelSpectrogram {
    pub fn new(n_frames: usize, n_mels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_frames * n_mels {
            return Err(Error::Shape(format!(
                "{n_frames}x{n_mels} spectrogram needs {} values, got {}",
                n_frames * n_mels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("spectrogram holds non-finite values".into()));
        }
        Ok(Self {
            n_frames,
            n_mels,
            values,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, f: usize) -> f32 {
        self.values[t * self.n_mels + f]
    }

    /// Per-bin mean over time.
    pub fn mean_over_time(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_mels];
        for t in 0..self.n_frames {
            for (a, &v) in acc.iter_mut().zip(self.frame(t)) {
                *a += v as f64;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.n_frames.max(1) as f64);
        acc
    }

    /// Frequency-major copy (`F × T`), the layout models consume.
    pub fn transposed(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.values.len()];
        for t in 0..self.n_frames {
            for f in 0..self.n_mels {
                out[f * self.n_frames + t] = self.values[t * self.n_mels + f];
            }
        }
        out
    }
}

const SPEC_MAGIC: &[u8; 4] = b"SLRF";
const SPEC_VERSION: u16 = 1;

/// Serializes to the `SLRF` layout: magic, u16 version, u32 T, u32 F, then T·F f32, all little-endian.
pub fn encode_spectrogram(spec: &LogMelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + spec.values.len() * 4);
    out.extend_from_slice(SPEC_MAGIC);
    out.extend_from_slice(&SPEC_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_mels as u32).to_le_bytes());
    for v in &spec.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8]) -> Result<LogMelSpectrogram> {
    let bad = |detail: &str| Error::Format {
        what: "spectrogram file",
        detail: detail.to_string(),
    };
    if bytes.len() < 14 || &bytes[..4] != SPEC_MAGIC {
        return Err(bad("missing SLRF header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SPEC_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let t = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let body = &bytes[14..];
    if body.len() != t * f * 4 {
        return Err(bad(&format!(
            "payload has {} bytes, header promises {}",
            body.len(),
            t * f * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LogMelSpectrogram::new(t, f, values)
}

pub fn write_spectrogram(path: impl AsRef<Path>, spec: &LogMelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_spectrogram(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: impl AsRef<Path>) -> Result<LogMelSpectrogram> {
    let path = path.as_ref();
    decode_spectrogram(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Log-mel feature extractor with a cached FFT plan, window and filterbank.
pub struct LogMelExtractor {
    fft: Arc<dyn RealToComplex<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl LogMelExtractor {
    pub fn new() -> Result<Self> {
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(N_FFT);
        // periodic Hann
        let window = (0..WIN_LENGTH)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WIN_LENGTH as f64).cos())
            .collect();
        Ok(Self {
            fft,
            window,
            filterbank: mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE)?,
        })
    }

    /// Process-wide shared extractor.
    pub fn shared() -> &'static LogMelExtractor {
        static SHARED: OnceLock<LogMelExtractor> = OnceLock::new();
        SHARED.get_or_init(|| LogMelExtractor::new().expect("default filterbank is valid"))
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn num_frames(num_samples: usize) -> usize {
        num_samples / HOP_LENGTH + 1
    }

    /// Frame `t`: the Hann-windowed 400 samples centered on sample `t·160`,
    /// followed by zeros up to 1024 points.
    pub fn windowed_frame(&self, samples: &[f32], t: usize, out: &mut [f64]) {
        let start = (t * HOP_LENGTH) as isize - (WIN_LENGTH / 2) as isize;
        for (i, (o, w)) in out.iter_mut().zip(&self.window).enumerate() {
            *o = samples[reflect(start + i as isize, samples.len())] as f64 * w;
        }
        out[WIN_LENGTH..].fill(0.0);
    }

    /// One-sided power spectrum `|X_k|^2`, `k = 0..=512`, of a 1024-point frame.
    pub fn power_spectrum(&self, frame: &mut [f64]) -> Vec<f64> {
        let mut spectrum = vec![Complex::new(0.0, 0.0); N_FFT / 2 + 1];
        self.fft
            .process(frame, &mut spectrum)
            .expect("buffer sizes match the plan");
        spectrum.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<LogMelSpectrogram> {
        let samples = clip.samples();
        if samples.len() < HOP_LENGTH {
            return Err(Error::InvalidInput(format!(
                "clip of {} samples is shorter than one {HOP_LENGTH}-sample hop",
                samples.len()
            )));
        }
        let n_frames = Self::num_frames(samples.len());
        let mut values = Vec::with_capacity(n_frames * N_MELS);
        let mut frame = self.fft.make_input_vec();
        let mut spectrum = self.fft.make_output_vec();
        let mut power = vec![0.0f64; N_FFT / 2 + 1];
        let mut mel = [0.0f64; N_MELS];
        for t in 0..n_frames {
            self.windowed_frame(samples, t, &mut frame);
            self.fft
                .process(&mut frame, &mut spectrum)
                .expect("buffer sizes match the plan");
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            values.extend(mel.iter().map(|&e| e.max(LOG_FLOOR).ln() as f32));
        }
        LogMelSpectrogram::new(n_frames, N_MELS, values)
    }
}

/// 64-bin log-mel spectrogram: 25 ms periodic Hann window, 1024-point FFT,
/// 10 ms hop, centered frames with reflection padding, natural log with a
/// `1e-10` floor. A clip of `n` samples yields `n / 160 + 1` frames.
pub fn log_mel(clip: &AudioClip) -> Result<LogMelSpectrogram> {
    LogMelExtractor::shared().compute(clip)
}

/// Ranges and probabilities for [`augment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub noise_snr_db_range: (f64, f64),
    /// RT60 of the synthetic room, in seconds.
    pub reverb_decay_s_range: (f64, f64),
    pub eq_gain_db_range: (f64, f64),
    pub eq_bands: usize,
    pub noise_prob: f64,
    pub reverb_prob: f64,
    pub eq_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            noise_snr_db_range: (5.0, 30.0),
            reverb_decay_s_range: (0.1, 0.5),
            eq_gain_db_range: (-6.0, 6.0),
            eq_bands: 8,
            noise_prob: 0.5,
            reverb_prob: 0.5,
            eq_prob: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// Every transform switched off.
    pub fn disabled() -> Self {
        Self {
            noise_prob: 0.0,
            reverb_prob: 0.0,
            eq_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("noise_snr_db_range", self.noise_snr_db_range),
            ("reverb_decay_s_range", self.reverb_decay_s_range),
            ("eq_gain_db_range", self.eq_gain_db_range),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Config(format!("{name} must satisfy min <= max, got ({lo}, {hi})")));
            }
        }
        if self.reverb_decay_s_range.0 <= 0.0 {
            return Err(Error::Config("reverb decay must be positive".into()));
        }
        for (name, p) in [
            ("noise_prob", self.noise_prob),
            ("reverb_prob", self.reverb_prob),
            ("eq_prob", self.eq_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.eq_bands == 0 {
            return Err(Error::Config("eq_bands must be at least 1".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Adds white Gaussian noise at `snr_db` relative to the signal's mean power.
/// Silent input is returned unchanged.
pub fn add_noise<R: Rng + ?Sized>(x: &mut [f64], snr_db: f64, rng: &mut R) {
    let p = mean_power(x);
    if p == 0.0 {
        return;
    }
    let sigma = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    for v in x.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += sigma * n;
    }
}

/// Linear convolution truncated to `x.len()`.
fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a = vec![0.0; n];
    a[..x.len()].copy_from_slice(x);
    let mut b = vec![0.0; n];
    b[..h.len()].copy_from_slice(h);
    let mut fa = fwd.make_output_vec();
    let mut fb = fwd.make_output_vec();
    fwd.process(&mut a, &mut fa).expect("sized by plan");
    fwd.process(&mut b, &mut fb).expect("sized by plan");
    for (p, q) in fa.iter_mut().zip(&fb) {
        *p *= q;
    }
    inv.process(&mut fa, &mut a).expect("sized by plan");
    let scale = 1.0 / n as f64;
    a.truncate(x.len());
    a.iter_mut().for_each(|v| *v *= scale);
    a
}

/// Convolves with an exponentially decaying noise tail; the output keeps the
/// input's length and mean power.
fn apply_reverb<R: Rng + ?Sized>(x: &[f64], rt60_s: f64, rng: &mut R) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let len = ((rt60_s * sr).round() as usize).max(2);
    // amplitude falls by 60 dB (a factor of 1000) at rt60
    let k = 1000f64.ln() / (rt60_s * sr);
    let mut ir = Vec::with_capacity(len);
    ir.push(1.0);
    for n in 1..len {
        let g: f64 = StandardNormal.sample(rng);
        ir.push(0.5 * g * (-k * n as f64).exp());
    }
    let mut y = fft_convolve(x, &ir);
    let (px, py) = (mean_power(x), mean_power(&y));
    if py > 0.0 {
        let s = (px / py).sqrt();
        y.iter_mut().for_each(|v| *v *= s);
    }
    y
}

/// Cascade of `bands` bell-shaped gain stages with log-spaced centers,
/// applied to the full-length spectrum.
fn apply_eq<R: Rng + ?Sized>(x: &[f64], bands: usize, gain_range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let (f_lo, f_hi) = (60.0f64, 7000.0f64);
    let octaves = (f_hi / f_lo).log2();
    let step = if bands > 1 { octaves / (bands - 1) as f64 } else { octaves };
    let stages: Vec<(f64, f64)> = (0..bands)
        .map(|b| {
            let center = f_lo * 2f64.powf(step * b as f64);
            (center, uniform(rng, gain_range))
        })
        .collect();
    let width = (step / 2.0).max(0.25);

    // the padding absorbs the (short) impulse response of a smooth gain curve
    let n = (x.len() + 4096).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf = vec![0.0; n];
    buf[..x.len()].copy_from_slice(x);
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut buf, &mut spec).expect("sized by plan");
    let sr = SAMPLE_RATE as f64;
    for (k, c) in spec.iter_mut().enumerate() {
        let f = (k as f64 * sr / n as f64).max(1.0);
        let db: f64 = stages
            .iter()
            .map(|&(fc, g)| {
                let d = (f / fc).log2() / width;
                g * (-0.5 * d * d).exp()
            })
            .sum();
        *c *= 10f64.powf(db / 20.0);
    }
    // realfft requires purely real DC and Nyquist bins
    spec[0].im = 0.0;
    if let Some(last) = spec.last_mut() {
        last.im = 0.0;
    }
    inv.process(&mut spec, &mut buf).expect("sized by plan");
    buf.truncate(x.len());
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Randomly reverberates, equalizes and adds noise to a clip.
///
/// Each transform fires independently with its configured probability; they
/// run in the order reverb, EQ, noise so that the SNR is measured against
/// the signal the listener would hear. The result is rescaled only if its
/// peak exceeds 1. With every probability at zero the clip is returned
/// unchanged.
pub fn augment<R: Rng + ?Sized>(clip: &AudioClip, cfg: &AugmentationConfig, rng: &mut R) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot augment an empty clip".into()));
    }
    cfg.validate()?;
    let do_reverb = rng.random::<f64>() < cfg.reverb_prob;
    let do_eq = rng.random::<f64>() < cfg.eq_prob;
    let do_noise = rng.random::<f64>() < cfg.noise_prob;
    if !(do_reverb || do_eq || do_noise) {
        return Ok(clip.clone());
    }
    let mut x: Vec<f64> = clip.samples().iter().map(|&s| s as f64).collect();
    if do_reverb {
        let rt60 = uniform(rng, cfg.reverb_decay_s_range);
        x = apply_reverb(&x, rt60, rng);
    }
    if do_eq {
        x = apply_eq(&x, cfg.eq_bands, cfg.eq_gain_db_range, rng);
    }
    if do_noise {
        let snr = uniform(rng, cfg.noise_snr_db_range);
        add_noise(&mut x, snr, rng);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    AudioClip::new(x.iter().map(|v| (v * scale) as f32).collect(), clip.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, amp: f64, n: usize) -> AudioClip {
        AudioClip::from_samples(
            (0..n)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn filterbank_rows_are_positive_and_increasing() {
        let fb = mel_filterbank(64, 1024, 16000).unwrap();
        for row in fb.to_dense() {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
        }
        assert!(fb.center_frequencies().windows(2).all(|w| w[0] < w[1]));
    }

    /// Straight-line evaluation of the HTK triangle for filter 0 at every bin.
    #[test]
    fn first_filter_matches_direct_evaluation() {
        let fb = mel_filterbank(64, 1024, 16000).unwrap();
        let mel_top = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let edge = |i: f64| 700.0 * (10f64.powf(mel_top * i / 65.0 / 2595.0) - 1.0);
        let (l, c, u) = (edge(0.0), edge(1.0), edge(2.0));
        let mut best = (0usize, 0.0f64);
        for k in 0..513 {
            let f = k as f64 * 16000.0 / 1024.0;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < u {
                (u - f) / (u - c)
            } else {
                0.0
            };
            if w > best.1 {
                best = (k, w);
            }
        }
        let row = &fb.to_dense()[0];
        let (k, w) = row
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (k, &w)| if w > acc.1 { (k, w) } else { acc });
        assert_eq!(k, best.0);
        assert!((w - best.1).abs() < 1e-12);
    }

    #[test]
    fn too_many_mels_is_a_config_error() {
        assert!(matches!(mel_filterbank(400, 256, 16000), Err(Error::Config(_))));
        assert!(matches!(mel_filterbank(64, 1000, 16000), Err(Error::Config(_))));
    }

    #[test]
    fn ten_seconds_gives_1001_frames() {
        let spec = log_mel(&AudioClip::from_samples(vec![0.0; 160_000]).unwrap()).unwrap();
        assert_eq!((spec.n_frames(), spec.n_mels()), (1001, 64));
        let floor = (1e-10f64).ln() as f32;
        assert!(spec.values().iter().all(|&v| v == floor));
    }

    #[test]
    fn shorter_than_a_hop_is_rejected() {
        let short = AudioClip::from_samples(vec![0.1; 159]).unwrap();
        assert!(matches!(log_mel(&short), Err(Error::InvalidInput(_))));
        assert_eq!(log_mel(&AudioClip::from_samples(vec![0.1; 160]).unwrap()).unwrap().n_frames(), 2);
    }

    #[test]
    fn sine_peaks_in_nearest_filter() {
        let spec = log_mel(&sine(1000.0, 0.5, 16000)).unwrap();
        let fb = mel_filterbank(64, 1024, 16000).unwrap();
        let expected = fb
            .center_frequencies()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().partial_cmp(&(b.1 - 1000.0).abs()).unwrap())
            .unwrap()
            .0;
        for t in 3..spec.n_frames() - 3 {
            let row = spec.frame(t);
            let arg = (0..64).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        let ex = LogMelExtractor::shared();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f32> = (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut frame = vec![0.0; N_FFT];
        for t in [0, 7, 25, 50] {
            ex.windowed_frame(&samples, t, &mut frame);
            let energy: f64 = frame.iter().map(|v| v * v).sum();
            let p = ex.power_spectrum(&mut frame.clone());
            let total = p[0] + p[512] + 2.0 * p[1..512].iter().sum::<f64>();
            assert!(((total / N_FFT as f64) - energy).abs() <= 1e-6 * energy);
        }
    }

    #[test]
    fn doubling_amplitude_adds_log4() {
        let a = sine(440.0, 0.2, 8000);
        let b = AudioClip::from_samples(a.samples().iter().map(|s| s * 2.0).collect()).unwrap();
        let (sa, sb) = (log_mel(&a).unwrap(), log_mel(&b).unwrap());
        let floor = (1e-10f64).ln() as f32 + 1.0;
        for (x, y) in sa.values().iter().zip(sb.values()) {
            if *x > floor {
                assert!(((y - x) as f64 - 4f64.ln()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn spectrogram_file_round_trip() {
        let spec = log_mel(&sine(300.0, 0.3, 4000)).unwrap();
        let bytes = encode_spectrogram(&spec);
        assert_eq!(&bytes[..4], b"SLRF");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 26);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 64);
        assert_eq!(decode_spectrogram(&bytes).unwrap(), spec);
        assert!(decode_spectrogram(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let c = sine(200.0, 0.7, 20000);
        let out = augment(&c, &AugmentationConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(out, c);
    }

    /// Noise power measured by projecting the clean signal out of the output,
    /// which is insensitive to the final peak rescale.
    fn measured_snr_db(clean: &[f32], out: &[f32]) -> f64 {
        let dot: f64 = clean.iter().zip(out).map(|(&a, &b)| a as f64 * b as f64).sum();
        let norm: f64 = clean.iter().map(|&a| a as f64 * a as f64).sum();
        let g = dot / norm;
        let noise: f64 = clean
            .iter()
            .zip(out)
            .map(|(&a, &b)| (b as f64 - g * a as f64).powi(2))
            .sum();
        10.0 * (g * g * norm / noise).log10()
    }

    #[test]
    fn noise_at_20db_on_unit_power_sine() {
        let c = sine(440.0, std::f64::consts::SQRT_2, 160_000);
        let cfg = AugmentationConfig {
            noise_snr_db_range: (20.0, 20.0),
            noise_prob: 1.0,
            reverb_prob: 0.0,
            eq_prob: 0.0,
            ..Default::default()
        };
        let out = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let snr = measured_snr_db(c.samples(), out.samples());
        assert!((snr - 20.0).abs() < 0.5, "snr {snr}");
        assert!(out.samples().iter().all(|s| s.abs() <= 1.0));

        // and directly, without the peak rescale
        let mut x: Vec<f64> = c.samples().iter().map(|&s| s as f64).collect();
        add_noise(&mut x, 20.0, &mut ChaCha8Rng::seed_from_u64(12));
        let sig: f64 = c.samples().iter().map(|&s| (s as f64).powi(2)).sum();
        let noise: f64 = x.iter().zip(c.samples()).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        assert!((10.0 * (sig / noise).log10() - 20.0).abs() < 0.5);
    }

    #[test]
    fn augmentation_is_deterministic_and_length_preserving() {
        let c = sine(330.0, 0.8, 48_000);
        let cfg = AugmentationConfig {
            noise_prob: 1.0,
            reverb_prob: 1.0,
            eq_prob: 1.0,
            ..Default::default()
        };
        let a = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), c.len());
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = AugmentationConfig {
            eq_gain_db_range: (3.0, -3.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AugmentationConfig {
            noise_prob: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn augmentation_keeps_length_and_finiteness(
            n in 200usize..6000,
            seed in 0u64..1000,
            amp in 0.0f32..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f32> = (0..n).map(|_| amp * rng.random_range(-1.0f32..1.0)).collect();
            let c = AudioClip::from_samples(samples).unwrap();
            let cfg = AugmentationConfig { noise_prob: 0.8, reverb_prob: 0.8, eq_prob: 0.8, ..Default::default() };
            let out = augment(&c, &cfg, &mut rng).unwrap();
            proptest::prop_assert_eq!(out.len(), n);
            proptest::prop_assert!(out.samples().iter().all(|s| s.is_finite() && s.abs() <= 1.0));
        }
    }
}
