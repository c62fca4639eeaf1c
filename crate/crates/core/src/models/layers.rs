use std::sync::Mutex;

use rand::Rng;

use crate::error::Result;
use crate::tensor::{self, batch_norm, conv1d, conv2d, dense, Float, RunningStats, Tensor};

/// A named trainable tensor with its Adam moment estimates.
#[derive(Debug)]
pub struct Param<T: Float> {
    pub name: String,
    pub value: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
}

impl<T: Float> Param<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self> {
        let value = Tensor::parameter(shape, data)?;
        let n = value.numel();
        Ok(Self {
            name: name.into(),
            value,
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
        })
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self> {
        Self::new(name, shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: T) -> Result<Self> {
        Self::new(name, shape, vec![v; shape.iter().product()])
    }

    /// He-uniform fan-in initialization: `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn he_uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        Self::new(name, shape, data)
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Replaces the value, keeping the optimizer state.
    pub fn set_data(&mut self, data: Vec<T>) -> Result<()> {
        self.value = Tensor::parameter(self.value.shape(), data)?;
        Ok(())
    }
}

impl<T: Float> Clone for Param<T> {
    /// Deep copy: the clone gets its own gradient slot.
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            value: Tensor::parameter(self.value.shape(), self.value.to_vec())
                .expect("cloning a valid parameter"),
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
        }
    }
}

/// Access to the parameters and batch-norm layers of a (sub)network.
pub trait Module<T: Float> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        Vec::new()
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        Vec::new()
    }
}

/// Collects from several children into one list.
macro_rules! gather {
    ($self:ident . $method:ident ( $($field:ident),* $(,)? )) => {{
        let mut v = Vec::new();
        $( v.extend($self.$field.$method()); )*
        v
    }};
}
pub(crate) use gather;

#[derive(Debug, Clone)]
pub struct Conv1d<T: Float> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl<T: Float> Conv1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = Param::he_uniform(format!("{name}.weight"), &[c_out, c_in, kernel], c_in * kernel, rng)?;
        let bias = if bias {
            Some(Param::zeros(format!("{name}.bias"), &[c_out])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            dilation,
            // "same" padding for odd kernels at stride 1
            padding: (kernel - 1) * dilation / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv1d(
            x,
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
            self.stride,
            self.dilation,
            self.padding,
        )
    }
}

impl<T: Float> Module<T> for Conv1d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Float> {
    pub weight: Param<T>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Float> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let weight = Param::he_uniform(
            format!("{name}.weight"),
            &[c_out, c_in, kernel.0, kernel.1],
            c_in * kernel.0 * kernel.1,
            rng,
        )?;
        Ok(Self {
            weight,
            stride: (1, 1),
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight.value, None, self.stride, self.padding)
    }
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight]
    }
}

/// Batch normalization with interior-mutable running statistics, so a
/// training-mode forward can run through a shared reference.
#[derive(Debug)]
pub struct BatchNorm<T: Float> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    stats: Mutex<RunningStats<T>>,
}

impl<T: Float> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            gamma: Param::filled(format!("{name}.gamma"), &[channels], T::one())?,
            beta: Param::zeros(format!("{name}.beta"), &[channels])?,
            stats: Mutex::new(RunningStats::new(channels)),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let mut stats = self.stats.lock().expect("batch-norm stats poisoned");
        batch_norm(x, &self.gamma.value, &self.beta.value, &mut stats, train)
    }

    pub fn stats(&self) -> RunningStats<T> {
        self.stats.lock().expect("batch-norm stats poisoned").clone()
    }

    pub fn set_stats(&mut self, stats: RunningStats<T>) {
        *self.stats.get_mut().expect("batch-norm stats poisoned") = stats;
    }
}

impl<T: Float> Clone for BatchNorm<T> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            stats: Mutex::new(self.stats()),
        }
    }
}

impl<T: Float> Module<T> for BatchNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        vec![self]
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        vec![self]
    }
}

#[derive(Debug, Clone)]
pub struct Dense<T: Float> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Float> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weight: Param::he_uniform(format!("{name}.weight"), &[d_out, d_in], d_in, rng)?,
            bias: Param::zeros(format!("{name}.bias"), &[d_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense(x, &self.weight.value, &self.bias.value)
    }
}

impl<T: Float> Module<T> for Dense<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Conv → ReLU → BN, the unit every LECAPAT stage is built from.
#[derive(Debug, Clone)]
pub struct TdnnUnit<T: Float> {
    pub conv: Conv1d<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Float> TdnnUnit<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(&format!("{name}.conv"), c_in, c_out, kernel, 1, dilation, false, rng)?,
            bn: BatchNorm::new(&format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        self.bn.forward(&tensor::relu(&self.conv.forward(x)?)?, train)
    }
}

impl<T: Float> Module<T> for TdnnUnit<T> {
    fn params(&self) -> Vec<&Param<T>> {
        gather!(self.params(conv, bn))
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        gather!(self.params_mut(conv, bn))
    }
    fn norms(&self) -> Vec<&BatchNorm<T>> {
        vec![&self.bn]
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        vec![&mut self.bn]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_three_to_two_has_eight_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::<f32>::new("fc", 3, 2, &mut rng).unwrap();
        assert_eq!(d.params().iter().map(|p| p.numel()).sum::<usize>(), 8);
    }

    #[test]
    fn he_uniform_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Param::<f64>::he_uniform("w", &[64, 24], 24, &mut rng).unwrap();
        let b = (6.0f64 / 24.0).sqrt();
        assert!(p.value.data().iter().all(|v| v.abs() < b));
        assert!(p.adam_m.iter().chain(&p.adam_v).all(|&v| v == 0.0));
    }

    #[test]
    fn clone_does_not_share_gradients() {
        let p = Param::<f64>::filled("w", &[2], 1.0).unwrap();
        let q = p.clone();
        tensor::sum(&p.value).unwrap().backward().unwrap();
        assert!(p.value.grad().is_some());
        assert!(q.value.grad().is_none());
    }

    #[test]
    fn batch_norm_clone_snapshots_stats() {
        let bn = BatchNorm::<f64>::new("bn", 1).unwrap();
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, true).unwrap();
        let copy = bn.clone();
        bn.forward(&x, true).unwrap();
        assert_ne!(copy.stats(), bn.stats());
    }
}
