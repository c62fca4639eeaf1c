//! Audio ingestion: WAV files, clip fitting and dataset manifests.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Default model input duration in seconds.
pub const CLIP_SECONDS: f64 = 10.0;

/// Mono PCM audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Wraps samples, rejecting any rate other than 16 kHz and any non-finite sample.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Unsupported {
                field: "sample_rate",
                found: sample_rate.to_string(),
                expected: SAMPLE_RATE.to_string(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_samples(samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "wav",
        detail: detail.into(),
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a mono 16 kHz RIFF/WAVE file holding s16le or f32le samples.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Decodes an in-memory WAV image. See [`load_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err("missing RIFF/WAVE header"));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                format_err(format!(
                    "chunk `{}` overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(format_err("fmt chunk shorter than 16 bytes"));
                }
                let mut tag = le_u16(body, 0);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(format_err("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk"));
                    }
                    tag = le_u16(body, 24);
                }
                fmt = Some((tag, le_u16(body, 2), le_u32(body, 4), le_u16(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (tag, channels, rate, bits) = fmt.ok_or_else(|| format_err("no fmt chunk"))?;
    let data = data.ok_or_else(|| format_err("no data chunk"))?;
    if channels != 1 {
        return Err(Error::Unsupported {
            field: "channels",
            found: channels.to_string(),
            expected: "1".into(),
        });
    }
    if rate != SAMPLE_RATE {
        return Err(Error::Unsupported {
            field: "sample_rate",
            found: rate.to_string(),
            expected: SAMPLE_RATE.to_string(),
        });
    }
    let samples: Vec<f32> = match (tag, bits) {
        (WAVE_FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (WAVE_FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (WAVE_FORMAT_PCM | WAVE_FORMAT_IEEE_FLOAT, b) => {
            return Err(Error::Unsupported {
                field: "bits_per_sample",
                found: b.to_string(),
                expected: "16 (PCM) or 32 (float)".into(),
            })
        }
        (t, _) => {
            return Err(Error::Unsupported {
                field: "format_tag",
                found: t.to_string(),
                expected: "1 (PCM) or 3 (IEEE float)".into(),
            })
        }
    };
    if samples.is_empty() {
        return Err(format_err("data chunk holds no samples"));
    }
    AudioClip::new(samples, rate)
}

/// Encodes a clip as a mono WAV image.
pub fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let (tag, bits) = match encoding {
        WavEncoding::Pcm16 => (WAVE_FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (WAVE_FORMAT_IEEE_FLOAT, 32u16),
    };
    let block_align = bits / 8;
    let data_len = clip.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in &clip.samples {
                let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        WavEncoding::Float32 => {
            for &s in &clip.samples {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip, encoding)).map_err(|e| Error::io(path, e))
}

/// How [`fit_to_duration`] treats clips longer than the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Zero-pad short clips symmetrically, crop long ones around their center.
    Center,
    /// Zero-pad short clips symmetrically, take a uniformly random window of long ones.
    RandomSubclip,
}

/// Number of samples in a clip of `seconds` at 16 kHz.
pub fn samples_for(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round() as usize
}

/// Pads or crops `clip` to exactly `target_s` seconds.
///
/// Short clips are centered with the left pad taking `floor(pad / 2)` zeros.
/// The generator is only consulted for long clips in [`FitMode::RandomSubclip`].
pub fn fit_to_duration<R: Rng + ?Sized>(
    clip: &AudioClip,
    target_s: f64,
    mode: FitMode,
    rng: &mut R,
) -> Result<AudioClip> {
    fit_with(clip, target_s, |excess| match mode {
        FitMode::Center => excess / 2,
        FitMode::RandomSubclip => rng.random_range(0..=excess),
    })
}

/// Deterministic center fitting; no generator needed.
pub fn fit_center(clip: &AudioClip, target_s: f64) -> Result<AudioClip> {
    fit_with(clip, target_s, |excess| excess / 2)
}

fn fit_with(
    clip: &AudioClip,
    target_s: f64,
    crop_start: impl FnOnce(usize) -> usize,
) -> Result<AudioClip> {
    if target_s.is_nan() || target_s <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "target duration must be positive, got {target_s}"
        )));
    }
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot fit an empty clip".into()));
    }
    let target = samples_for(target_s);
    let n = clip.len();
    let samples = if n == target {
        clip.samples.clone()
    } else if n < target {
        let pad = target - n;
        let left = pad / 2;
        let mut out = vec![0.0f32; target];
        out[left..left + n].copy_from_slice(&clip.samples);
        out
    } else {
        let start = crop_start(n - target);
        clip.samples[start..start + target].to_vec()
    };
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}

/// Either a target language index or the non-target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Language(usize),
    Other,
}

impl Label {
    /// Row/column index in a `(L + 1)`-class layout where Other comes last.
    pub fn class_index(self, num_languages: usize) -> usize {
        match self {
            Label::Language(i) => i,
            Label::Other => num_languages,
        }
    }

    /// Inverse of [`Label::class_index`].
    pub fn from_class_index(index: usize, num_languages: usize) -> Self {
        if index >= num_languages {
            Label::Other
        } else {
            Label::Language(index)
        }
    }

    pub fn name(self, languages: &[String]) -> String {
        match self {
            Label::Language(i) => languages
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("lang{i}")),
            Label::Other => OTHER_LABEL.to_string(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Language(i) => write!(f, "{i}"),
            Label::Other => f.write_str(OTHER_LABEL),
        }
    }
}

/// Literal manifest label for non-target audio.
pub const OTHER_LABEL: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
}

/// A list of labelled audio files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry count per target language, followed by the Other count.
    pub fn class_counts(&self, num_languages: usize) -> Vec<usize> {
        let mut counts = vec![0; num_languages + 1];
        for e in &self.entries {
            counts[e.label.class_index(num_languages)] += 1;
        }
        counts
    }

    /// Checks the label range and that every target language has at least one entry.
    pub fn validate_training(&self, languages: &[String]) -> Result<()> {
        let l = languages.len();
        for e in &self.entries {
            if let Label::Language(i) = e.label {
                if i >= l {
                    return Err(Error::Config(format!(
                        "{} has language index {i} but only {l} languages are configured",
                        e.path.display()
                    )));
                }
            }
        }
        let counts = self.class_counts(l);
        if let Some(missing) = counts[..l].iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "training manifest has no entries for language `{}`",
                languages[missing]
            )));
        }
        Ok(())
    }

    /// Entries whose label is a target language.
    pub fn targets_only(&self) -> DatasetManifest {
        DatasetManifest::new(
            self.entries
                .iter()
                .filter(|e| e.label != Label::Other)
                .cloned()
                .collect(),
        )
    }
}

/// Parses a tab-separated `<path>\t<label>` manifest.
///
/// Relative paths are resolved against the manifest's directory. Labels must
/// be one of `languages` or the literal `other`.
pub fn read_manifest(path: impl AsRef<Path>, languages: &[String]) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let manifest = parse_manifest(&text, base, languages).map_err(|(line, detail)| {
        Error::Manifest {
            path: path.to_path_buf(),
            line,
            detail,
        }
    })?;
    if manifest.is_empty() {
        log::warn!("manifest {} has no entries", path.display());
    }
    Ok(manifest)
}

fn parse_manifest(
    text: &str,
    base: &Path,
    languages: &[String],
) -> std::result::Result<DatasetManifest, (usize, String)> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, label) = line
            .split_once('\t')
            .ok_or_else(|| (line_no, "expected `<path>\\t<label>`".to_string()))?;
        let label = label.trim();
        let label = if label == OTHER_LABEL {
            Label::Other
        } else {
            languages
                .iter()
                .position(|l| l == label)
                .map(Label::Language)
                .ok_or_else(|| (line_no, format!("unknown label `{label}`")))?
        };
        let p = PathBuf::from(p);
        let p = if p.is_relative() { base.join(p) } else { p };
        if !seen.insert(p.clone()) {
            log::info!("duplicate manifest entry {} (line {line_no})", p.display());
        }
        entries.push(ManifestEntry { path: p, label });
    }
    Ok(DatasetManifest { entries })
}

/// Writes a manifest; paths under `base` are stored relative to it.
pub fn write_manifest(
    path: impl AsRef<Path>,
    manifest: &DatasetManifest,
    languages: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = String::new();
    for e in &manifest.entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        out.push_str(&format!("{}\t{}\n", p.display(), e.label.name(languages)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(n: usize) -> AudioClip {
        AudioClip::from_samples((0..n).map(|i| ((i % 97) as f32 - 48.0) / 64.0).collect()).unwrap()
    }

    #[test]
    fn constant_pcm16_scales_to_half() {
        let c = AudioClip::from_samples(vec![0.5; 16000]).unwrap();
        let bytes = encode_wav(&c, WavEncoding::Pcm16);
        // 0.5 * 32768 = 16384 exactly
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 16384);
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.len(), 16000);
        assert!(back.samples().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn stereo_is_rejected_naming_channels() {
        let mut bytes = encode_wav(&clip(100), WavEncoding::Pcm16);
        bytes[22] = 2;
        match decode_wav(&bytes) {
            Err(Error::Unsupported { field, .. }) => assert_eq!(field, "channels"),
            other => panic!("expected unsupported channels, got {other:?}"),
        }
    }

    #[test]
    fn wrong_rate_is_rejected_naming_rate() {
        let mut bytes = encode_wav(&clip(100), WavEncoding::Pcm16);
        bytes[24..28].copy_from_slice(&44100u32.to_le_bytes());
        match decode_wav(&bytes) {
            Err(Error::Unsupported { field, .. }) => assert_eq!(field, "sample_rate"),
            other => panic!("expected unsupported rate, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_a_format_error() {
        assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(Error::Format { .. })));
        let bytes = encode_wav(&clip(100), WavEncoding::Pcm16);
        assert!(matches!(decode_wav(&bytes[..30]), Err(Error::Format { .. })));
    }

    #[test]
    fn float_wav_is_exact() {
        let c = clip(777);
        assert_eq!(decode_wav(&encode_wav(&c, WavEncoding::Float32)).unwrap(), c);
    }

    #[test]
    fn four_second_clip_is_centered() {
        let c = AudioClip::from_samples(vec![1.0; 64000]).unwrap();
        let out = fit_center(&c, 10.0).unwrap();
        let s = out.samples();
        assert_eq!(s.len(), 160_000);
        assert!(s[..48000].iter().all(|&v| v == 0.0));
        assert!(s[48000..112000].iter().all(|&v| v == 1.0));
        assert!(s[112000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_pad_gives_left_the_smaller_half() {
        let c = AudioClip::from_samples(vec![1.0; 159_999]).unwrap();
        let out = fit_center(&c, 10.0).unwrap();
        assert_eq!(out.samples()[0], 1.0);
        assert_eq!(out.samples()[159_999], 0.0);
    }

    #[test]
    fn exact_length_is_identity_in_both_modes() {
        let c = clip(160_000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(fit_to_duration(&c, 10.0, FitMode::RandomSubclip, &mut rng).unwrap(), c);
        assert_eq!(fit_center(&c, 10.0).unwrap(), c);
    }

    #[test]
    fn random_subclip_is_reproducible() {
        let c = clip(192_000);
        let a = fit_to_duration(&c, 10.0, FitMode::RandomSubclip, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = fit_to_duration(&c, 10.0, FitMode::RandomSubclip, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 160_000);
    }

    #[test]
    fn long_clip_center_crop() {
        let c = clip(160_010);
        let out = fit_center(&c, 10.0).unwrap();
        assert_eq!(out.samples(), &c.samples()[5..160_005]);
    }

    #[test]
    fn empty_clip_and_bad_target_are_rejected() {
        let empty = AudioClip::from_samples(vec![]).unwrap();
        assert!(matches!(fit_center(&empty, 10.0), Err(Error::InvalidInput(_))));
        assert!(matches!(fit_center(&clip(10), 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        assert!(AudioClip::from_samples(vec![0.0, f32::NAN]).is_err());
        assert!(AudioClip::new(vec![0.0], 8000).is_err());
    }

    fn langs() -> Vec<String> {
        ["en", "es", "de", "fr"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("a.wav\ten\n# comment\n\nb.wav\tfr\nc.wav\tother\n", Path::new("/d"), &langs())
            .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries[0].label, Label::Language(0));
        assert_eq!(m.entries[0].path, PathBuf::from("/d/a.wav"));
        assert_eq!(m.entries[1].label, Label::Language(3));
        assert_eq!(m.entries[2].label, Label::Other);
    }

    #[test]
    fn unknown_label_names_the_line() {
        let err = parse_manifest("a.wav\ten\nb.wav\txx\n", Path::new(""), &langs()).unwrap_err();
        assert_eq!(err.0, 2);
        assert!(err.1.contains("xx"));
    }

    #[test]
    fn empty_manifest_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "").unwrap();
        assert!(read_manifest(&p, &langs()).unwrap().is_empty());
    }

    #[test]
    fn manifest_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let m = DatasetManifest::new(vec![
            ManifestEntry { path: dir.path().join("x.wav"), label: Label::Language(1) },
            ManifestEntry { path: dir.path().join("x.wav"), label: Label::Language(1) },
            ManifestEntry { path: "/abs/y.wav".into(), label: Label::Other },
        ]);
        write_manifest(&p, &m, &langs()).unwrap();
        assert_eq!(read_manifest(&p, &langs()).unwrap(), m);
    }

    #[test]
    fn training_validation_requires_every_language() {
        let m = DatasetManifest::new(vec![ManifestEntry { path: "a".into(), label: Label::Language(0) }]);
        let err = m.validate_training(&langs()).unwrap_err();
        assert!(err.to_string().contains("es"));
    }

    proptest::proptest! {
        #[test]
        fn fit_length_and_center_idempotence(n in 1usize..200_000) {
            let c = AudioClip::from_samples(vec![0.25; n]).unwrap();
            let once = fit_center(&c, 10.0).unwrap();
            proptest::prop_assert_eq!(once.len(), 160_000);
            let twice = fit_center(&once, 10.0).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
