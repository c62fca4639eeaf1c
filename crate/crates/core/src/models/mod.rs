//! The three architectures, their building blocks and weight files.
//!
//! Every model consumes a log-mel batch laid out `[N, F, T]` (mel bins as
//! channels) and produces `[N, output_units]` logits.

mod io;
pub mod layers;
pub mod lecapat;
pub mod tcresnet;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{decode_weights, encode_weights, load_weights, load_weights_as, save_weights, WEIGHT_MAGIC};
pub use layers::{BatchNorm, Module, Param};
pub use lecapat::{AttentiveStatsPooling, Lecapat, LecapatConfig, SeRes2NetBlock, SqueezeExcite};
pub use tcresnet::{ResBlock, TcLayout, TcResNet};

use crate::error::{Error, Result};
use crate::features::{LogMelSpectrogram, N_MELS};
use crate::tensor::{self, no_grad, Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[serde(rename = "tc_resnet10")]
    TcResNet10,
    #[serde(rename = "tc_resnet14")]
    TcResNet14,
    Lecapat,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::TcResNet10, Architecture::TcResNet14, Architecture::Lecapat];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::TcResNet10 => "tc_resnet10",
            Architecture::TcResNet14 => "tc_resnet14",
            Architecture::Lecapat => "lecapat",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}` (tc_resnet10, tc_resnet14, lecapat)")))
    }
}

/// Output layer and its nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Softmax over the target languages.
    Multiclass,
    /// Softmax over the target languages plus one explicit Other unit.
    MulticlassPlusOther,
    /// Independent sigmoids; Other is "no language above threshold".
    Multilabel,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Multiclass => "multiclass",
            HeadKind::MulticlassPlusOther => "multiclass_plus_other",
            HeadKind::Multilabel => "multilabel",
        }
    }

    pub fn output_units(self, num_languages: usize) -> usize {
        match self {
            HeadKind::MulticlassPlusOther => num_languages + 1,
            _ => num_languages,
        }
    }

    pub fn is_multilabel(self) -> bool {
        self == HeadKind::Multilabel
    }

    /// Applies softmax (multiclass heads) or sigmoid (multilabel) to `[N, K]` logits.
    pub fn activate<T: Float>(self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        if self.is_multilabel() {
            tensor::sigmoid(logits)
        } else {
            tensor::softmax(logits, 1)
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [HeadKind::Multiclass, HeadKind::MulticlassPlusOther, HeadKind::Multilabel]
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!("unknown head `{s}` (multiclass, multiclass_plus_other, multilabel)"))
            })
    }
}

fn default_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_languages: usize,
    pub head: HeadKind,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    #[serde(default)]
    pub lecapat: LecapatConfig,
    /// Display names of the target languages; empty means `lang0`, `lang1`, ….
    #[serde(default)]
    pub languages: Vec<String>,
    /// Seed for weight initialization.
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, num_languages: usize, head: HeadKind) -> Self {
        Self {
            architecture,
            num_languages,
            head,
            width_multiplier: 1.0,
            lecapat: LecapatConfig::default(),
            languages: Vec::new(),
            seed: 0,
        }
    }

    pub fn with_languages(mut self, languages: Vec<String>) -> Self {
        self.num_languages = languages.len();
        self.languages = languages;
        self
    }

    pub fn with_width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn output_units(&self) -> usize {
        self.head.output_units(self.num_languages)
    }

    pub fn language_names(&self) -> Vec<String> {
        if self.languages.is_empty() {
            (0..self.num_languages).map(|i| format!("lang{i}")).collect()
        } else {
            self.languages.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_languages == 0 {
            return Err(Error::Config("num_languages must be positive".into()));
        }
        if !self.languages.is_empty() && self.languages.len() != self.num_languages {
            return Err(Error::Config(format!(
                "{} language names given for {} languages",
                self.languages.len(),
                self.num_languages
            )));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "width_multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        Ok(())
    }
}

/// Whether batch norm uses batch statistics (and updates running ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Optional recorder of intermediate activation shapes.
#[derive(Debug, Default)]
pub(crate) struct Tracer(Option<Vec<LayerInfo>>);

impl Tracer {
    pub(crate) fn off() -> Self {
        Tracer(None)
    }

    fn on() -> Self {
        Tracer(Some(Vec::new()))
    }

    pub(crate) fn record<T: Float>(&mut self, name: &str, kind: &str, t: &Tensor<T>) {
        if let Some(v) = &mut self.0 {
            v.push(LayerInfo {
                name: name.to_string(),
                kind: kind.to_string(),
                output_shape: t.shape().to_vec(),
                params: 0,
            });
        }
    }
}

/// One row of a model's layer table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub(crate) enum Net<T: Float> {
    TcResNet(TcResNet<T>),
    Lecapat(Lecapat<T>),
}

impl<T: Float> Net<T> {
    fn module(&self) -> &dyn Module<T> {
        match self {
            Net::TcResNet(m) => m,
            Net::Lecapat(m) => m,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module<T> {
        match self {
            Net::TcResNet(m) => m,
            Net::Lecapat(m) => m,
        }
    }
}

/// A built network together with its configuration and mode.
///
/// In eval mode a model is read-only and may be shared across threads.
#[derive(Debug, Clone)]
pub struct Model<T: Float = f32> {
    config: ModelConfig,
    net: Net<T>,
    mode: Mode,
}

impl<T: Float> Model<T> {
    /// Builds a freshly initialized model in eval mode.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let outputs = config.output_units();
        let wm = config.width_multiplier;
        let net = match config.architecture {
            Architecture::TcResNet10 => Net::TcResNet(TcResNet::new(&TcLayout::resnet10().scaled(wm)?, outputs, &mut rng)?),
            Architecture::TcResNet14 => Net::TcResNet(TcResNet::new(&TcLayout::resnet14().scaled(wm)?, outputs, &mut rng)?),
            Architecture::Lecapat => Net::Lecapat(Lecapat::new(&config.lecapat.scaled(wm)?, outputs, &mut rng)?),
        };
        Ok(Self {
            config,
            net,
            mode: Mode::Eval,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    pub fn output_units(&self) -> usize {
        self.config.output_units()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn as_tc_resnet(&self) -> Option<&TcResNet<T>> {
        match &self.net {
            Net::TcResNet(m) => Some(m),
            Net::Lecapat(_) => None,
        }
    }

    pub fn as_lecapat(&self) -> Option<&Lecapat<T>> {
        match &self.net {
            Net::Lecapat(m) => Some(m),
            Net::TcResNet(_) => None,
        }
    }

    pub fn as_lecapat_mut(&mut self) -> Option<&mut Lecapat<T>> {
        match &mut self.net {
            Net::Lecapat(m) => Some(m),
            Net::TcResNet(_) => None,
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.net.module().params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.module_mut().params_mut()
    }

    pub fn norms(&self) -> Vec<&BatchNorm<T>> {
        self.net.module().norms()
    }

    pub fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        self.net.module_mut().norms_mut()
    }

    /// Trainable element count; batch-norm running statistics are excluded.
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for p in self.params() {
            p.value.zero_grad();
        }
    }

    /// Convolution and dense layers on the main path.
    pub fn weighted_layer_count(&self) -> usize {
        match &self.net {
            Net::TcResNet(m) => m.weighted_layers(),
            Net::Lecapat(m) => m.weighted_layers(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != N_MELS {
            return Err(Error::Shape(format!("model input must be [N, {N_MELS}, T], got {s:?}")));
        }
        if s[0] == 0 || s[2] == 0 {
            return Err(Error::InvalidInput(format!("empty model input {s:?}")));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, trace: &mut Tracer) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let train = self.mode == Mode::Train;
        match &self.net {
            Net::TcResNet(m) => m.forward(x, train, trace),
            Net::Lecapat(m) => m.forward(x, train, trace),
        }
    }

    /// `x: [N, 64, T]` → logits `[N, output_units]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, &mut Tracer::off())
    }

    /// Post-nonlinearity outputs (softmax or sigmoid per the head), without a tape.
    pub fn activations(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let out = no_grad(|| self.forward(x).and_then(|l| self.head().activate(&l)))?;
        let k = self.output_units();
        Ok(out.data().chunks(k).map(<[T]>::to_vec).collect())
    }

    /// Layer table for an input of `frames` frames, with per-layer parameter counts.
    pub fn layers(&self, frames: usize) -> Result<Vec<LayerInfo>> {
        let x = Tensor::zeros(&[1, N_MELS, frames]);
        let mut trace = Tracer::on();
        let eval = Model {
            mode: Mode::Eval,
            ..self.clone()
        };
        no_grad(|| eval.run(&x, &mut trace))?;
        let mut rows = trace.0.unwrap_or_default();
        let params = self.params();
        for r in &mut rows {
            let prefix = format!("{}.", r.name);
            r.params = params
                .iter()
                .filter(|p| p.name.starts_with(&prefix))
                .map(|p| p.numel())
                .sum();
        }
        Ok(rows)
    }

    /// Human-readable summary: configuration, layer table and totals.
    pub fn describe(&self, frames: usize) -> Result<String> {
        let c = &self.config;
        let mut s = format!(
            "architecture  {}\nhead          {} ({} outputs)\nlanguages     {}\nwidth         {}\n",
            c.architecture,
            c.head,
            self.output_units(),
            c.language_names().join(", "),
            c.width_multiplier
        );
        s.push_str(&format!("\n{:<10} {:<32} {:<18} {:>10}\n", "layer", "kind", "output", "params"));
        for r in self.layers(frames)? {
            s.push_str(&format!(
                "{:<10} {:<32} {:<18} {:>10}\n",
                r.name,
                r.kind,
                format!("{:?}", r.output_shape),
                r.params
            ));
        }
        s.push_str(&format!(
            "\nweighted layers  {}\nparameters       {}\n",
            self.weighted_layer_count(),
            self.count_params()
        ));
        Ok(s)
    }

    /// The same network with values converted to another float type.
    pub fn convert<U: Float>(&self) -> Result<Model<U>> {
        let mut out = Model::<U>::build(self.config.clone())?;
        out.mode = self.mode;
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.set_data(src.value.data().iter().map(|v| U::of(v.as_f64())).collect())?;
            dst.adam_m = src.adam_m.iter().map(|v| U::of(v.as_f64())).collect();
            dst.adam_v = src.adam_v.iter().map(|v| U::of(v.as_f64())).collect();
        }
        for (dst, src) in out.norms_mut().into_iter().zip(self.norms()) {
            let st = src.stats();
            dst.set_stats(tensor::RunningStats {
                mean: st.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                var: st.var.iter().map(|v| U::of(v.as_f64())).collect(),
            });
        }
        Ok(out)
    }
}

/// Stacks spectrograms with equal frame counts into a `[N, F, T]` batch.
pub fn features_batch<T: Float>(specs: &[&LogMelSpectrogram]) -> Result<Tensor<T>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::InvalidInput("empty feature batch".into()))?;
    let (t, f) = (first.n_frames(), first.n_mels());
    let mut data = Vec::with_capacity(specs.len() * t * f);
    for s in specs {
        if s.n_frames() != t || s.n_mels() != f {
            return Err(Error::Shape(format!(
                "feature batch mixes {}x{} with {t}x{f}",
                s.n_frames(),
                s.n_mels()
            )));
        }
        data.extend(s.transposed().into_iter().map(|v| T::of(v as f64)));
    }
    Tensor::new(&[specs.len(), f, t], data)
}
