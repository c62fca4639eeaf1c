use super::{Float, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (biased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Batch normalization over every axis except axis 1.
///
/// `x: [N, C, ...]`, `gamma`/`beta: [C]`. In training mode the batch mean and
/// biased variance normalize the input and are folded into `stats` as
/// `new = (1 − 0.1)·old + 0.1·batch`; in eval mode `stats` is used as-is.
pub fn batch_norm<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    train: bool,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() < 2 {
        return Err(Error::Shape(format!("batch_norm needs [N, C, ...], got {xs:?}")));
    }
    let (n, c) = (xs[0], xs[1]);
    let inner: usize = xs[2..].iter().product();
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::Shape(format!(
            "batch_norm over {c} channels got gamma {:?}, beta {:?}, {} running stats",
            gamma.shape(),
            beta.shape(),
            stats.mean.len()
        )));
    }
    let count = n * inner;
    if count == 0 {
        return Err(Error::InvalidInput("batch_norm on an empty batch".into()));
    }
    if train && count == 1 {
        return Err(Error::InvalidInput(
            "degenerate batch: training-mode batch_norm needs more than one value per channel".into(),
        ));
    }
    let xd = x.data();
    let at = move |b: usize, ch: usize| (b * c + ch) * inner;

    let (mean, istd): (Vec<f64>, Vec<f64>) = if train {
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                s += xd[at(b, ch)..at(b, ch) + inner].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let m = s / count as f64;
            let mut v = 0.0;
            for b in 0..n {
                v += xd[at(b, ch)..at(b, ch) + inner]
                    .iter()
                    .map(|x| (x.as_f64() - m).powi(2))
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = v / count as f64;
        }
        for ch in 0..c {
            stats.mean[ch] =
                T::of((1.0 - BN_MOMENTUM) * stats.mean[ch].as_f64() + BN_MOMENTUM * mean[ch]);
            stats.var[ch] = T::of((1.0 - BN_MOMENTUM) * stats.var[ch].as_f64() + BN_MOMENTUM * var[ch]);
        }
        let istd = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        (mean, istd)
    } else {
        (
            stats.mean.iter().map(|m| m.as_f64()).collect(),
            stats.var.iter().map(|v| 1.0 / (v.as_f64() + BN_EPS).sqrt()).collect(),
        )
    };

    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let (m, s) = (T::of(mean[ch]), T::of(istd[ch]));
            let (gm, bt) = (gd[ch], bd[ch]);
            let r = at(b, ch)..at(b, ch) + inner;
            for (o, &v) in out[r.clone()].iter_mut().zip(&xd[r]) {
                *o = gm * ((v - m) * s) + bt;
            }
        }
    }

    Tensor::from_op(
        "batch_norm",
        xs.to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |ctx| {
            let xd = ctx.inputs[0].data();
            let gd = ctx.inputs[1].data();
            let g = ctx.grad;
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = ctx.needs[0].then(|| vec![T::zero(); xd.len()]);
            for ch in 0..c {
                let (m, s) = (mean[ch], istd[ch]);
                let mut sum_g = 0.0f64;
                let mut sum_gx = 0.0f64;
                for b in 0..n {
                    let r = at(b, ch)..at(b, ch) + inner;
                    for (&gv, &xv) in g[r.clone()].iter().zip(&xd[r]) {
                        let gv = gv.as_f64();
                        sum_g += gv;
                        sum_gx += gv * (xv.as_f64() - m) * s;
                    }
                }
                dgamma[ch] = T::of(sum_gx);
                dbeta[ch] = T::of(sum_g);
                if let Some(dx) = dx.as_mut() {
                    let gm = gd[ch].as_f64();
                    let (mg, mgx) = (sum_g / count as f64, sum_gx / count as f64);
                    for b in 0..n {
                        let r = at(b, ch)..at(b, ch) + inner;
                        for ((d, &gv), &xv) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xd[r]) {
                            let gv = gv.as_f64();
                            *d = T::of(if train {
                                let xhat = (xv.as_f64() - m) * s;
                                gm * s * (gv - mg - xhat * mgx)
                            } else {
                                gm * s * gv
                            });
                        }
                    }
                }
            }
            Ok(vec![dx, Some(dgamma), Some(dbeta)])
        },
    )
}
