//! A synthetic stand-in for a multi-language speech corpus.
//!
//! Each "language" is a recipe: noise shaped into two spectral bands (at `fc`
//! and about `2.3·fc`) under a class-specific amplitude-modulation rate.
//! Recipes sit on a geometric frequency ladder; targets take the even rungs
//! and non-targets the odd ones, so every non-target lies between two targets.
//! Some non-targets can be held out of training entirely, so the open test
//! also contains languages the model never saw under any label.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{
    read_manifest, samples_for, write_manifest, write_wav, AudioClip, DatasetManifest, Label, ManifestEntry,
    WavEncoding,
};
use crate::error::{Error, Result};
use crate::features::log_mel;
use crate::SAMPLE_RATE;

const LOWEST_FC: f64 = 250.0;
const HIGHEST_FC: f64 = 3000.0;
const SECOND_BAND_RATIO: f64 = 2.3;
/// Log-normal spread of a clip's band centre around its recipe.
const FC_JITTER: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_target: usize,
    pub num_nontarget: usize,
    /// Non-target languages kept out of train and val; they only reach
    /// `test_open`. The odd-indexed non-targets are held out first.
    pub num_heldout: usize,
    pub per_class: usize,
    pub seed: u64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_target: 5,
            num_nontarget: 5,
            num_heldout: 2,
            per_class: 40,
            seed: 0,
            min_duration_s: 3.0,
            max_duration_s: 12.0,
        }
    }
}

/// Generative parameters of one synthetic language.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub center_hz: f64,
    pub am_rate_hz: f64,
}

/// The recipe ladder: `(target recipes, non-target recipes)`.
pub fn recipes(num_target: usize, num_nontarget: usize) -> (Vec<Recipe>, Vec<Recipe>) {
    let total = num_target + num_nontarget;
    let mut order = Vec::with_capacity(total);
    let (mut t, mut n) = (0, 0);
    // alternate while both remain, then append the rest
    while t < num_target || n < num_nontarget {
        if t < num_target && (order.len() % 2 == 0 || n >= num_nontarget) {
            order.push((true, t));
            t += 1;
        } else {
            order.push((false, n));
            n += 1;
        }
    }
    let mut targets = vec![None; num_target];
    let mut others = vec![None; num_nontarget];
    for (rung, &(is_target, i)) in order.iter().enumerate() {
        let frac = if total > 1 { rung as f64 / (total - 1) as f64 } else { 0.0 };
        let recipe = Recipe {
            center_hz: LOWEST_FC * (HIGHEST_FC / LOWEST_FC).powf(frac),
            // golden-ratio scatter over 2..8 Hz
            am_rate_hz: 2.0 + 6.0 * ((rung as f64 * 0.618_034) % 1.0),
        };
        if is_target {
            targets[i] = Some(recipe);
        } else {
            others[i] = Some(recipe);
        }
    }
    (
        targets.into_iter().map(Option::unwrap).collect(),
        others.into_iter().map(Option::unwrap).collect(),
    )
}

/// Renders `seconds` of audio for `recipe` with per-clip jitter.
pub fn render<R: Rng + ?Sized>(recipe: Recipe, seconds: f64, rng: &mut R) -> Result<AudioClip> {
    let n = samples_for(seconds);
    let fft_len = n.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let mut buf: Vec<f64> = (0..fft_len).map(|_| StandardNormal.sample(rng)).collect();
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut buf, &mut spec)
        .map_err(|e| Error::InvalidInput(format!("synthesis FFT failed: {e}")))?;
    let jitter = |rng: &mut R, rel: f64| {
        let z: f64 = StandardNormal.sample(rng);
        (rel * z).exp()
    };
    let fc = recipe.center_hz * jitter(rng, FC_JITTER);
    let fc2 = fc * SECOND_BAND_RATIO * jitter(rng, 0.03);
    let second_level = rng.random_range(0.4..0.8);
    let hz_per_bin = SAMPLE_RATE as f64 / fft_len as f64;
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k as f64 * hz_per_bin;
        let band = |center: f64| (-0.5 * ((f - center) / (0.12 * center)).powi(2)).exp();
        *c *= band(fc) + second_level * band(fc2);
    }
    spec[0].im = 0.0;
    if let Some(last) = spec.last_mut() {
        last.im = 0.0;
    }
    inv.process(&mut spec, &mut buf)
        .map_err(|e| Error::InvalidInput(format!("synthesis FFT failed: {e}")))?;
    buf.truncate(n);

    let rate = recipe.am_rate_hz * jitter(rng, 2.0 * FC_JITTER);
    let phase = rng.random_range(0.0..2.0 * PI);
    let depth = rng.random_range(0.6..0.9);
    for (i, v) in buf.iter_mut().enumerate() {
        let t = i as f64 / SAMPLE_RATE as f64;
        *v *= 1.0 + depth * (2.0 * PI * rate * t + phase).sin();
    }
    let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let gain = rng.random_range(0.1..0.6) / peak;
    let power = buf.iter().map(|v| (v * gain).powi(2)).sum::<f64>() / n as f64;
    let snr_db: f64 = rng.random_range(25.0..40.0);
    let noise_sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let samples = buf
        .iter()
        .map(|&v| {
            let noise: f64 = StandardNormal.sample(rng);
            ((v * gain + noise_sd * noise) as f32).clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::from_samples(samples)
}

/// Manifests of a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dir: PathBuf,
    pub languages: Vec<String>,
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    /// Target languages only.
    pub test_closed: DatasetManifest,
    /// Target and non-target languages.
    pub test_open: DatasetManifest,
}

pub const SPLITS: [&str; 4] = ["train", "val", "test_closed", "test_open"];

impl SynthCorpus {
    pub fn manifest(&self, split: &str) -> Option<&DatasetManifest> {
        match split {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test_closed" => Some(&self.test_closed),
            "test_open" => Some(&self.test_open),
            _ => None,
        }
    }

    /// Reads a corpus previously written by [`synth_corpus`].
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let lpath = dir.join("languages.txt");
        let languages: Vec<String> = fs::read_to_string(&lpath)
            .map_err(|e| Error::io(&lpath, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let read = |s: &str| read_manifest(dir.join(format!("{s}.tsv")), &languages);
        Ok(Self {
            train: read("train")?,
            val: read("val")?,
            test_closed: read("test_closed")?,
            test_open: read("test_open")?,
            languages,
            dir,
        })
    }
}

/// `(train, val, test)` sizes for one class: 60 / 20 / 20.
pub fn split_sizes(per_class: usize) -> (usize, usize, usize) {
    let train = (per_class as f64 * 0.6).round() as usize;
    let val = (per_class as f64 * 0.2).round() as usize;
    (train, val, per_class - train - val)
}

/// Writes WAV files, `languages.txt` and the four split manifests into `dir`.
/// The output depends only on `cfg`.
pub fn synth_corpus(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.num_target == 0 || cfg.per_class < 3 {
        return Err(Error::Config("need at least one target language and 3 clips per class".into()));
    }
    if !(cfg.min_duration_s > 0.0 && cfg.min_duration_s <= cfg.max_duration_s) {
        return Err(Error::Config(format!(
            "invalid duration range {}..{}",
            cfg.min_duration_s, cfg.max_duration_s
        )));
    }
    if cfg.num_heldout > cfg.num_nontarget / 2 {
        return Err(Error::Config(format!(
            "at most half of the {} non-target languages can be held out",
            cfg.num_nontarget
        )));
    }
    let dir = dir.as_ref().to_path_buf();
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let (targets, others) = recipes(cfg.num_target, cfg.num_nontarget);
    let languages: Vec<String> = (0..cfg.num_target).map(|i| format!("lang{i}")).collect();

    let held_out = |i: usize| i % 2 == 1 && i / 2 < cfg.num_heldout;
    // (file stem, recipe, label, held out)
    let classes: Vec<(String, Recipe, Label, bool)> = targets
        .iter()
        .enumerate()
        .map(|(i, &r)| (languages[i].clone(), r, Label::Language(i), false))
        .chain(
            others
                .iter()
                .enumerate()
                .map(|(i, &r)| (format!("nontarget{i}"), r, Label::Other, held_out(i))),
        )
        .collect();
    let (n_train, n_val, _) = split_sizes(cfg.per_class);
    let jobs: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|c| (0..cfg.per_class).map(move |i| (c, i)))
        .filter(|&(c, i)| !classes[c].3 || i >= n_train + n_val)
        .collect();
    let files: Vec<(usize, ManifestEntry)> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let (name, recipe, label, _) = &classes[c];
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((c * cfg.per_class + i) as u64);
            let seconds = rng.random_range(cfg.min_duration_s..=cfg.max_duration_s);
            let clip = render(*recipe, seconds, &mut rng)?;
            let path = wav_dir.join(format!("{name}_{i:03}.wav"));
            write_wav(&path, &clip, WavEncoding::Pcm16)?;
            Ok((i, ManifestEntry { path, label: *label }))
        })
        .collect::<Result<_>>()?;

    let mut corpus = SynthCorpus {
        dir: dir.clone(),
        languages: languages.clone(),
        train: DatasetManifest::default(),
        val: DatasetManifest::default(),
        test_closed: DatasetManifest::default(),
        test_open: DatasetManifest::default(),
    };
    for (i, e) in files {
        if i < n_train {
            corpus.train.entries.push(e);
        } else if i < n_train + n_val {
            corpus.val.entries.push(e);
        } else {
            if e.label != Label::Other {
                corpus.test_closed.entries.push(e.clone());
            }
            corpus.test_open.entries.push(e);
        }
    }
    let lpath = dir.join("languages.txt");
    fs::write(&lpath, languages.join("\n") + "\n").map_err(|e| Error::io(&lpath, e))?;
    for s in SPLITS {
        write_manifest(dir.join(format!("{s}.tsv")), corpus.manifest(s).expect("known split"), &languages)?;
    }
    Ok(corpus)
}

fn mean_log_mel(path: &Path) -> Result<Vec<f64>> {
    Ok(log_mel(&crate::audio::load_wav(path)?)?.mean_over_time())
}

/// Accuracy of a nearest-centroid classifier on time-averaged log-mel
/// vectors, fit on the target part of `train` and scored on `test`.
pub fn centroid_oracle_accuracy(train: &DatasetManifest, test: &DatasetManifest, num_languages: usize) -> Result<f64> {
    let train_feats: Vec<(Label, Vec<f64>)> = train
        .entries
        .par_iter()
        .filter(|e| e.label != Label::Other)
        .map(|e| Ok((e.label, mean_log_mel(&e.path)?)))
        .collect::<Result<_>>()?;
    let dim = train_feats.first().map_or(0, |f| f.1.len());
    let mut centroids = vec![vec![0.0; dim]; num_languages];
    let mut counts = vec![0usize; num_languages];
    for (label, f) in &train_feats {
        let c = label.class_index(num_languages);
        counts[c] += 1;
        centroids[c].iter_mut().zip(f).for_each(|(a, b)| *a += b);
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        if *n == 0 {
            return Err(Error::Config("centroid oracle: a target language has no training clips".into()));
        }
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let correct: usize = test
        .entries
        .par_iter()
        .map(|e| {
            let f = mean_log_mel(&e.path)?;
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..num_languages)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .expect("at least one language");
            Ok(usize::from(Label::Language(best) == e.label))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    if test.is_empty() {
        return Err(Error::InvalidInput("centroid oracle: empty test manifest".into()));
    }
    Ok(correct as f64 / test.len() as f64)
}
