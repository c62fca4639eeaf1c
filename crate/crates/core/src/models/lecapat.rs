use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{gather, BatchNorm, Conv1d, Dense, Module, Param, TdnnUnit};
use super::Tracer;
use crate::error::{Error, Result};
use crate::features::N_MELS;
use crate::tensor::{
    add, concat, mean_last, mul_channels, narrow, relu, sigmoid, softmax, stats_pool, tanh, Float, Tensor,
};

pub const STEM_KERNEL: usize = 5;
pub const RES2NET_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LecapatConfig {
    pub channels: usize,
    pub se_bottleneck: usize,
    pub res2net_scale: usize,
    pub dilation: usize,
    pub attention_dim: usize,
}

impl Default for LecapatConfig {
    fn default() -> Self {
        Self {
            channels: 336,
            se_bottleneck: 64,
            res2net_scale: 4,
            dilation: 2,
            attention_dim: 64,
        }
    }
}

impl LecapatConfig {
    /// Applies a width multiplier. Channels are rounded to a multiple of the
    /// Res2Net scale; the bottlenecks are rounded and kept at least 1.
    pub fn scaled(&self, width_multiplier: f64) -> Result<Self> {
        let s = self.res2net_scale;
        if s < 2 {
            return Err(Error::Config(format!("res2net_scale must be at least 2, got {s}")));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(s) {
            return Err(Error::Config(format!(
                "lecapat channels {} not divisible by res2net_scale {s}",
                self.channels
            )));
        }
        if self.dilation == 0 || self.se_bottleneck == 0 || self.attention_dim == 0 {
            return Err(Error::Config(
                "dilation, se_bottleneck and attention_dim must be positive".into(),
            ));
        }
        let groups = (self.channels as f64 * width_multiplier / s as f64).round() as usize;
        if groups == 0 {
            return Err(Error::Config(format!(
                "width_multiplier {width_multiplier} leaves lecapat with zero channels"
            )));
        }
        let shrink = |v: usize| ((v as f64 * width_multiplier).round() as usize).max(1);
        Ok(Self {
            channels: groups * s,
            se_bottleneck: shrink(self.se_bottleneck),
            res2net_scale: s,
            dilation: self.dilation,
            attention_dim: shrink(self.attention_dim),
        })
    }
}

/// Squeeze-excitation gate: temporal mean → bottleneck → ReLU → expand → sigmoid.
#[derive(Debug, Clone)]
pub struct SqueezeExcite<T: Float> {
    pub squeeze: Dense<T>,
    pub expand: Dense<T>,
}

impl<T: Float> SqueezeExcite<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, bottleneck: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            squeeze: Dense::new(&format!("{name}.squeeze"), channels, bottleneck, rng)?,
            expand: Dense::new(&format!("{name}.expand"), bottleneck, channels, rng)?,
        })
    }

    /// Per-channel gates `[N, C]` in (0, 1).
    pub fn gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = relu(&self.squeeze.forward(&mean_last(x)?)?)?;
        sigmoid(&self.expand.forward(&z)?)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        mul_channels(x, &self.gate(x)?)
    }
}

impl<T: Float> Module<T> for SqueezeExcite<T> {
    fn params(&self) -> Vec<&Param<T>> {
        gather!(self.params(squeeze, expand))
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        gather!(self.params_mut(squeeze, expand))
    }
}

/// 1×1 unit → Res2Net dilated group convolutions → 1×1 unit → SE, plus the
/// block input as a residual.
#[derive(Debug, Clone)]
pub struct SeRes2NetBlock<T: Float> {
    pub pre: TdnnUnit<T>,
    /// One unit per channel group after the first, which passes through unchanged.
    pub groups: Vec<TdnnUnit<T>>,
    pub post: TdnnUnit<T>,
    pub se: SqueezeExcite<T>,
    pub scale: usize,
}

impl<T: Float> SeRes2NetBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        scale: usize,
        dilation: usize,
        se_bottleneck: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if scale < 2 || !channels.is_multiple_of(scale) {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {scale} Res2Net groups"
            )));
        }
        let g = channels / scale;
        Ok(Self {
            pre: TdnnUnit::new(&format!("{name}.pre"), channels, channels, 1, 1, rng)?,
            groups: (1..scale)
                .map(|i| TdnnUnit::new(&format!("{name}.res2net.{i}"), g, g, RES2NET_KERNEL, dilation, rng))
                .collect::<Result<_>>()?,
            post: TdnnUnit::new(&format!("{name}.post"), channels, channels, 1, 1, rng)?,
            se: SqueezeExcite::new(&format!("{name}.se"), channels, se_bottleneck, rng)?,
            scale,
        })
    }

    fn res2net(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let g = x.shape()[1] / self.scale;
        let mut outs = vec![narrow(x, 1, 0, g)?];
        for (i, unit) in self.groups.iter().enumerate() {
            let xi = narrow(x, 1, (i + 1) * g, g)?;
            let input = if i == 0 { xi } else { add(&xi, &outs[i])? };
            outs.push(unit.forward(&input, train)?);
        }
        concat(&outs, 1)
    }

    /// Everything before the SE gate.
    pub fn transform(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let h = self.pre.forward(x, train)?;
        let h = self.res2net(&h, train)?;
        self.post.forward(&h, train)
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.shape()[1] != self.pre.bn.channels() {
            return Err(Error::Shape(format!(
                "SE-Res2Net block over {} channels got input {:?}",
                self.pre.bn.channels(),
                x.shape()
            )));
        }
        let h = self.transform(x, train)?;
        add(&self.se.forward(&h)?, x)
    }

    /// The block with the SE gate removed: `transform(x) + x`.
    pub fn forward_ungated(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        add(&self.transform(x, train)?, x)
    }
}

impl<T: Float> Module<T> for SeRes2NetBlock<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.pre.params();
        v.extend(self.groups.iter().flat_map(|u| u.params()));
        v.extend(self.post.params());
        v.extend(self.se.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.pre.params_mut();
        v.extend(self.groups.iter_mut().flat_map(|u| u.params_mut()));
        v.extend(self.post.params_mut());
        v.extend(self.se.params_mut());
        v
    }
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        let mut v = vec![&self.pre.bn];
        v.extend(self.groups.iter().map(|u| &u.bn));
        v.push(&self.post.bn);
        v
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.pre.bn];
        v.extend(self.groups.iter_mut().map(|u| &mut u.bn));
        v.push(&mut self.post.bn);
        v
    }
}

/// Per-channel attention over time followed by weighted mean/std pooling.
#[derive(Debug, Clone)]
pub struct AttentiveStatsPooling<T: Float> {
    pub hidden: Conv1d<T>,
    pub score: Conv1d<T>,
}

impl<T: Float> AttentiveStatsPooling<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, attention_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            hidden: Conv1d::new(&format!("{name}.hidden"), channels, attention_dim, 1, 1, 1, true, rng)?,
            score: Conv1d::new(&format!("{name}.score"), attention_dim, channels, 1, 1, 1, true, rng)?,
        })
    }

    /// Attention logits `[N, C, T]`.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.score.forward(&tanh(&self.hidden.forward(x)?)?)
    }

    /// Softmax over time of `logits`, then weighted statistics of `x`.
    pub fn pool_with_logits(&self, x: &Tensor<T>, logits: &Tensor<T>) -> Result<Tensor<T>> {
        stats_pool(x, Some(&softmax(logits, 2)?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() == 3 && x.shape()[2] == 0 {
            return Err(Error::InvalidInput("attentive pooling over zero frames".into()));
        }
        self.pool_with_logits(x, &self.logits(x)?)
    }
}

impl<T: Float> Module<T> for AttentiveStatsPooling<T> {
    fn params(&self) -> Vec<&Param<T>> {
        gather!(self.params(hidden, score))
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        gather!(self.params_mut(hidden, score))
    }
}

/// Lightweight ECAPA-style TDNN with a single SE-Res2Net block.
#[derive(Debug, Clone)]
pub struct Lecapat<T: Float> {
    pub stem: TdnnUnit<T>,
    pub block: SeRes2NetBlock<T>,
    pub post: TdnnUnit<T>,
    pub pool: AttentiveStatsPooling<T>,
    pub pool_bn: BatchNorm<T>,
    pub head: Dense<T>,
}

impl<T: Float> Lecapat<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &LecapatConfig, outputs: usize, rng: &mut R) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            stem: TdnnUnit::new("stem", N_MELS, c, STEM_KERNEL, 1, rng)?,
            block: SeRes2NetBlock::new("block", c, cfg.res2net_scale, cfg.dilation, cfg.se_bottleneck, rng)?,
            post: TdnnUnit::new("post", c, c, 1, 1, rng)?,
            pool: AttentiveStatsPooling::new("pool", c, cfg.attention_dim, rng)?,
            pool_bn: BatchNorm::new("pool.bn", 2 * c)?,
            head: Dense::new("head", 2 * c, outputs, rng)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, train: bool, trace: &mut Tracer) -> Result<Tensor<T>> {
        let h = self.stem.forward(x, train)?;
        trace.record("stem", "conv1d + ReLU + BN", &h);
        let h = self.block.forward(&h, train)?;
        trace.record("block", "SE-Res2Net block", &h);
        let h = self.post.forward(&h, train)?;
        trace.record("post", "conv1d + ReLU + BN", &h);
        let p = self.pool_bn.forward(&self.pool.forward(&h)?, train)?;
        trace.record("pool", "attentive stats pooling + BN", &p);
        let out = self.head.forward(&p)?;
        trace.record("head", "dense", &out);
        Ok(out)
    }

    pub fn weighted_layers(&self) -> usize {
        // stem, block (pre, groups, post, two SE dense), post, two attention convs, head
        1 + (2 + self.block.groups.len() + 2) + 1 + 2 + 1
    }
}

impl<T: Float> Module<T> for Lecapat<T> {
    fn params(&self) -> Vec<&Param<T>> {
        gather!(self.params(stem, block, post, pool, pool_bn, head))
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        gather!(self.params_mut(stem, block, post, pool, pool_bn, head))
    }
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        gather!(self.norms(stem, block, post, pool_bn))
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        gather!(self.norms_mut(stem, block, post, pool_bn))
    }
}
