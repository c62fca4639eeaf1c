use rand::Rng;

use super::layers::{gather, BatchNorm, Conv1d, Conv2d, Dense, Module, Param};
use super::Tracer;
use crate::error::{Error, Result};
use crate::features::N_MELS;
use crate::tensor::{add, mean_last, relu, reshape, Float, Tensor};

pub const BLOCK_KERNEL: usize = 9;
pub const STEM_KERNEL_T: usize = 3;

/// Channel layout of a TC-ResNet: a stem width and one width per stage. Each
/// stage holds a stride-2 block followed by a stride-1 block.
#[derive(Debug, Clone, PartialEq)]
pub struct TcLayout {
    pub stem: usize,
    pub stages: Vec<usize>,
}

impl TcLayout {
    /// Two stages (repetition λ ∈ {0, 1}): about 200k parameters at 11 outputs.
    pub fn resnet10() -> Self {
        Self {
            stem: 32,
            stages: vec![40, 64],
        }
    }

    /// Three stages of 0.875× the classic {16, 24, 32, 48} widths: about 100k parameters.
    pub fn resnet14() -> Self {
        Self {
            stem: 14,
            stages: vec![21, 28, 42],
        }
    }

    pub fn scaled(&self, width_multiplier: f64) -> Result<Self> {
        let scale = |c: usize, what: &str| {
            let s = (c as f64 * width_multiplier).round() as usize;
            if s == 0 {
                Err(Error::Config(format!(
                    "width_multiplier {width_multiplier} leaves {what} with zero channels"
                )))
            } else {
                Ok(s)
            }
        };
        Ok(Self {
            stem: scale(self.stem, "the stem")?,
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(i, &c)| scale(c, &format!("stage {i}")))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock<T: Float> {
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv1d<T>,
    pub bn2: BatchNorm<T>,
    pub skip: Option<(Conv1d<T>, BatchNorm<T>)>,
}

impl<T: Float> ResBlock<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Result<Self> {
        let k = BLOCK_KERNEL;
        let skip = if c_in != c_out || stride != 1 {
            Some((
                Conv1d::new(&format!("{name}.skip.conv"), c_in, c_out, 1, stride, 1, false, rng)?,
                BatchNorm::new(&format!("{name}.skip.bn"), c_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv1d::new(&format!("{name}.conv1"), c_in, c_out, k, stride, 1, false, rng)?,
            bn1: BatchNorm::new(&format!("{name}.bn1"), c_out)?,
            conv2: Conv1d::new(&format!("{name}.conv2"), c_out, c_out, k, 1, 1, false, rng)?,
            bn2: BatchNorm::new(&format!("{name}.bn2"), c_out)?,
            skip,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let h = relu(&self.bn1.forward(&self.conv1.forward(x)?, train)?)?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        let s = match &self.skip {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        relu(&add(&h, &s)?)
    }
}

impl<T: Float> Module<T> for ResBlock<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = gather!(self.params(conv1, bn1, conv2, bn2));
        if let Some((c, b)) = &self.skip {
            v.extend(c.params());
            v.extend(b.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = gather!(self.params_mut(conv1, bn1, conv2, bn2));
        if let Some((c, b)) = &mut self.skip {
            v.extend(c.params_mut());
            v.extend(b.params_mut());
        }
        v
    }
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        let mut v = vec![&self.bn1, &self.bn2];
        v.extend(self.skip.as_ref().map(|(_, b)| b));
        v
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        v.extend(self.skip.as_mut().map(|(_, b)| b));
        v
    }
}

/// Temporal-convolution ResNet.
///
/// A 2D stem whose kernel spans all mel bins collapses the frequency axis, so
/// every later layer is a 1D convolution over time.
#[derive(Debug, Clone)]
pub struct TcResNet<T: Float> {
    pub stem: Conv2d<T>,
    pub stem_bn: BatchNorm<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub head: Dense<T>,
}

impl<T: Float> TcResNet<T> {
    pub fn new<R: Rng + ?Sized>(layout: &TcLayout, outputs: usize, rng: &mut R) -> Result<Self> {
        let stem = Conv2d::new("stem.conv", 1, layout.stem, (N_MELS, STEM_KERNEL_T), (0, STEM_KERNEL_T / 2), rng)?;
        let mut blocks = Vec::new();
        let mut c = layout.stem;
        for (i, &w) in layout.stages.iter().enumerate() {
            blocks.push(ResBlock::new(&format!("blocks.{}", 2 * i), c, w, 2, rng)?);
            blocks.push(ResBlock::new(&format!("blocks.{}", 2 * i + 1), w, w, 1, rng)?);
            c = w;
        }
        Ok(Self {
            stem,
            stem_bn: BatchNorm::new("stem.bn", layout.stem)?,
            blocks,
            head: Dense::new("head", c, outputs, rng)?,
        })
    }

    /// `x: [N, F, T]` log-mel batch → logits `[N, outputs]`.
    pub(crate) fn forward(&self, x: &Tensor<T>, train: bool, trace: &mut Tracer) -> Result<Tensor<T>> {
        let s = x.shape();
        let h = reshape(x, &[s[0], 1, s[1], s[2]])?;
        let h = self.stem.forward(&h)?;
        let h = relu(&self.stem_bn.forward(&h, train)?)?;
        trace.record("stem", "conv2d + BN + ReLU", &h);
        let hs = h.shape().to_vec();
        let mut h = reshape(&h, &[hs[0], hs[1], hs[3]])?;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&h, train)?;
            trace.record(&format!("blocks.{i}"), "residual block", &h);
        }
        let pooled = mean_last(&h)?;
        trace.record("pool", "global average pool", &pooled);
        let out = self.head.forward(&pooled)?;
        trace.record("head", "dense", &out);
        Ok(out)
    }

    /// Convolution and dense layers, not counting skip projections.
    pub fn weighted_layers(&self) -> usize {
        1 + 2 * self.blocks.len() + 1
    }
}

impl<T: Float> Module<T> for TcResNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = gather!(self.params(stem, stem_bn));
        v.extend(self.blocks.iter().flat_map(|b| b.params()));
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = gather!(self.params_mut(stem, stem_bn));
        v.extend(self.blocks.iter_mut().flat_map(|b| b.params_mut()));
        v.extend(self.head.params_mut());
        v
    }
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        let mut v = vec![&self.stem_bn];
        v.extend(self.blocks.iter().flat_map(|b| b.norms()));
        v
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.stem_bn];
        v.extend(self.blocks.iter_mut().flat_map(|b| b.norms_mut()));
        v
    }
}
