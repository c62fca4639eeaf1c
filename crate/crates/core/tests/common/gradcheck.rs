//! Central finite differences against the tape, in f64.
//!
//! Every output is projected onto a fixed random direction `R`, so the scalar
//! checked is `sum(out * R)` and every output element contributes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use slr_core::models::layers::{Dense, TdnnUnit};
use slr_core::models::{
    AttentiveStatsPooling, HeadKind, Mode, Model, ModelConfig, Module, Param, ResBlock, SeRes2NetBlock,
    SqueezeExcite,
};
use slr_core::tensor::{self as t, no_grad, RunningStats, Tensor};
use slr_core::training::{binary_ce, categorical_ce};
use slr_core::{Architecture, Result};

use super::rng;

const STEP: f64 = 1e-6;
/// Denominator floor for the relative error of near-zero gradients. Some
/// gradients are exactly zero (the attention score bias cancels in the
/// softmax over time), where the difference quotient is pure roundoff of
/// order `eps·|L|/STEP`.
const FLOOR: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn randn(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Normal samples pushed at least `gap` away from zero, so ReLU kinks stay out of reach.
fn randn_away(shape: &[usize], seed: u64, gap: f64) -> Vec<f64> {
    randn(shape, seed).into_iter().map(|v| v + gap.copysign(v)).collect()
}

fn project(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let r = Tensor::new(out.shape(), randn(out.shape(), seed ^ 0xA5A5))?;
    t::sum(&t::mul(out, &r)?)
}

fn coordinates(n: usize, samples: usize, seed: u64) -> Vec<usize> {
    if n <= samples {
        return (0..n).collect();
    }
    let mut r = rng(seed);
    (0..samples).map(|_| r.random_range(0..n)).collect()
}

/// Checks `f` with respect to all of its tensor inputs; returns the largest relative error.
pub fn check_fn(inputs: &[(Vec<usize>, Vec<f64>)], f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) -> f64 {
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|(s, d)| Tensor::parameter(s, d.clone()).unwrap()).collect();
    let out = f(&leaves).unwrap();
    let seed = out.numel() as u64;
    project(&out, seed).unwrap().backward().unwrap();
    let loss = |vals: &[Vec<f64>]| -> f64 {
        no_grad(|| {
            let ts: Vec<Tensor<f64>> = inputs.iter().zip(vals).map(|((s, _), d)| Tensor::new(s, d.clone()).unwrap()).collect();
            project(&f(&ts).unwrap(), seed).unwrap().item().unwrap()
        })
    };
    let mut worst = 0.0f64;
    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    for (i, leaf) in leaves.iter().enumerate() {
        let grad = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let orig = vals[i][j];
            vals[i][j] = orig + STEP;
            let up = loss(&vals);
            vals[i][j] = orig - STEP;
            let down = loss(&vals);
            vals[i][j] = orig;
            worst = worst.max(rel_err(grad[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Checks a parameterized block with respect to its input and (a sample of) its parameters.
pub fn check_block<M>(
    m: &mut M,
    params: fn(&mut M) -> Vec<&mut Param<f64>>,
    x: (Vec<usize>, Vec<f64>),
    samples: usize,
    f: impl Fn(&M, &Tensor<f64>) -> Result<Tensor<f64>>,
) -> f64 {
    for p in params(m) {
        p.value.zero_grad();
    }
    let leaf = Tensor::parameter(&x.0, x.1.clone()).unwrap();
    let out = f(m, &leaf).unwrap();
    let seed = out.numel() as u64 + 7;
    project(&out, seed).unwrap().backward().unwrap();
    let loss = |m: &M, xd: &[f64]| -> f64 {
        no_grad(|| {
            let xt = Tensor::new(&x.0, xd.to_vec()).unwrap();
            project(&f(m, &xt).unwrap(), seed).unwrap().item().unwrap()
        })
    };
    let mut worst = 0.0f64;

    let xg = leaf.grad().unwrap();
    let mut xd = x.1.clone();
    for j in coordinates(xd.len(), samples, 1) {
        let orig = xd[j];
        xd[j] = orig + STEP;
        let up = loss(m, &xd);
        xd[j] = orig - STEP;
        let down = loss(m, &xd);
        xd[j] = orig;
        worst = worst.max(rel_err(xg[j], (up - down) / (2.0 * STEP)));
    }

    let grads: Vec<Vec<f64>> = params(m)
        .iter()
        .map(|p| p.value.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for (pi, g) in grads.iter().enumerate() {
        for j in coordinates(g.len(), samples, 100 + pi as u64) {
            let data = params(m)[pi].value.to_vec();
            let mut nudged = data.clone();
            nudged[j] = data[j] + STEP;
            params(m)[pi].set_data(nudged.clone()).unwrap();
            let up = loss(m, &x.1);
            nudged[j] = data[j] - STEP;
            params(m)[pi].set_data(nudged).unwrap();
            let down = loss(m, &x.1);
            params(m)[pi].set_data(data).unwrap();
            worst = worst.max(rel_err(g[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

fn tensor(shape: &[usize], seed: u64) -> (Vec<usize>, Vec<f64>) {
    (shape.to_vec(), randn(shape, seed))
}

fn module_params<M: Module<f64>>(m: &mut M) -> Vec<&mut Param<f64>> {
    m.params_mut()
}

fn model_params(m: &mut Model<f64>) -> Vec<&mut Param<f64>> {
    m.params_mut()
}

/// Named checks for every differentiable op: `(name, max relative error)`.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let a = tensor(&[3, 4], 1);
    let b = tensor(&[3, 4], 2);
    out.push(("add", check_fn(&[a.clone(), b.clone()], |x| t::add(&x[0], &x[1]))));
    out.push(("mul", check_fn(&[a.clone(), b.clone()], |x| t::mul(&x[0], &x[1]))));
    out.push(("scale", check_fn(std::slice::from_ref(&a), |x| t::scale(&x[0], -1.7))));
    out.push(("sum", check_fn(std::slice::from_ref(&a), |x| t::sum(&x[0]))));
    out.push(("reshape", check_fn(std::slice::from_ref(&a), |x| t::reshape(&x[0], &[2, 6]))));
    out.push((
        "dense",
        check_fn(&[tensor(&[3, 5], 3), tensor(&[4, 5], 4), tensor(&[4], 5)], |x| t::dense(&x[0], &x[1], &x[2])),
    ));
    let kinked = (vec![4, 5], randn_away(&[4, 5], 6, 1e-2));
    out.push(("relu", check_fn(&[kinked], |x| t::relu(&x[0]))));
    out.push(("sigmoid", check_fn(&[tensor(&[4, 5], 7)], |x| t::sigmoid(&x[0]))));
    out.push(("tanh", check_fn(&[tensor(&[4, 5], 8)], |x| t::tanh(&x[0]))));
    let cube = tensor(&[2, 3, 4], 9);
    out.push(("softmax axis 0", check_fn(std::slice::from_ref(&cube), |x| t::softmax(&x[0], 0))));
    out.push(("softmax axis 1", check_fn(std::slice::from_ref(&cube), |x| t::softmax(&x[0], 1))));
    out.push(("softmax axis 2", check_fn(std::slice::from_ref(&cube), |x| t::softmax(&x[0], 2))));
    out.push(("mean_last", check_fn(std::slice::from_ref(&cube), |x| t::mean_last(&x[0]))));
    out.push((
        "mul_channels",
        check_fn(&[tensor(&[2, 3, 5], 10), tensor(&[2, 3], 11)], |x| t::mul_channels(&x[0], &x[1])),
    ));
    out.push(("narrow", check_fn(&[tensor(&[2, 4, 3], 12)], |x| t::narrow(&x[0], 1, 1, 2))));
    out.push((
        "concat",
        check_fn(&[tensor(&[2, 2, 3], 13), tensor(&[2, 3, 3], 14)], |x| t::concat(&[x[0].clone(), x[1].clone()], 1)),
    ));
    let seq = tensor(&[2, 3, 6], 15);
    out.push(("stats_pool uniform", check_fn(std::slice::from_ref(&seq), |x| t::stats_pool(&x[0], None))));
    out.push((
        "stats_pool shared weights",
        check_fn(&[seq.clone(), tensor(&[2, 6], 16)], |x| t::stats_pool(&x[0], Some(&t::softmax(&x[1], 1)?))),
    ));
    out.push((
        "stats_pool per-channel weights",
        check_fn(&[seq.clone(), tensor(&[2, 3, 6], 17)], |x| t::stats_pool(&x[0], Some(&t::softmax(&x[1], 2)?))),
    ));
    out.push((
        "conv1d strided dilated",
        check_fn(&[tensor(&[2, 3, 11], 18), tensor(&[4, 3, 3], 19), tensor(&[4], 20)], |x| {
            t::conv1d(&x[0], &x[1], Some(&x[2]), 2, 2, 2)
        }),
    ));
    out.push((
        "conv1d plain",
        check_fn(&[tensor(&[2, 3, 9], 21), tensor(&[2, 3, 5], 22)], |x| t::conv1d(&x[0], &x[1], None, 1, 1, 2)),
    ));
    out.push((
        "conv2d",
        check_fn(&[tensor(&[2, 2, 5, 7], 23), tensor(&[3, 2, 3, 2], 24), tensor(&[3], 25)], |x| {
            t::conv2d(&x[0], &x[1], Some(&x[2]), (1, 2), (1, 1))
        }),
    ));
    let bn_in = [tensor(&[4, 3, 5], 26), tensor(&[3], 27), tensor(&[3], 28)];
    out.push((
        "batch_norm train",
        check_fn(&bn_in, |x| t::batch_norm(&x[0], &x[1], &x[2], &mut RunningStats::new(3), true)),
    ));
    out.push((
        "batch_norm eval",
        check_fn(&bn_in, |x| {
            let mut st = RunningStats {
                mean: vec![0.3, -0.2, 0.1],
                var: vec![0.5, 1.7, 2.2],
            };
            t::batch_norm(&x[0], &x[1], &x[2], &mut st, false)
        }),
    ));
    out.push((
        "categorical_ce",
        check_fn(&[tensor(&[4, 5], 29)], |x| categorical_ce(&x[0], &[0, 3, 4, 3])),
    ));
    out.push((
        "binary_ce",
        check_fn(&[tensor(&[3, 4], 30)], |x| {
            binary_ce(&x[0], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0])
        }),
    ));
    out
}

/// Named checks for the composite blocks.
pub fn block_suite() -> Vec<(&'static str, f64)> {
    let mut r = rng(40);
    let mut out = Vec::new();
    let mut dense = Dense::<f64>::new("d", 5, 3, &mut r).unwrap();
    out.push(("dense layer", check_block(&mut dense, module_params, tensor(&[4, 5], 41), 64, |m, x| m.forward(x))));
    let mut unit = TdnnUnit::<f64>::new("u", 4, 6, 5, 2, &mut r).unwrap();
    out.push((
        "tdnn unit",
        check_block(&mut unit, module_params, tensor(&[2, 4, 12], 42), 32, |m, x| m.forward(x, true)),
    ));
    let mut se = SqueezeExcite::<f64>::new("se", 6, 3, &mut r).unwrap();
    out.push(("squeeze-excite", check_block(&mut se, module_params, tensor(&[2, 6, 9], 43), 32, |m, x| m.forward(x))));
    let mut block = SeRes2NetBlock::<f64>::new("b", 8, 4, 2, 3, &mut r).unwrap();
    out.push((
        "SE-Res2Net block",
        check_block(&mut block, module_params, tensor(&[2, 8, 12], 44), 24, |m, x| m.forward(x, true)),
    ));
    let mut pool = AttentiveStatsPooling::<f64>::new("p", 6, 4, &mut r).unwrap();
    out.push((
        "attentive stats pooling",
        check_block(&mut pool, module_params, tensor(&[2, 6, 10], 45), 32, |m, x| m.forward(x)),
    ));
    let mut res = ResBlock::<f64>::new("r", 4, 6, 2, &mut r).unwrap();
    out.push((
        "TC-ResNet block",
        check_block(&mut res, module_params, tensor(&[2, 4, 16], 46), 24, |m, x| m.forward(x, true)),
    ));
    out
}

/// A width-0.125 model on 64 frames, trained-mode batch norm.
pub fn tiny_model_check(architecture: Architecture) -> f64 {
    let mut m = Model::<f64>::build(
        ModelConfig::new(architecture, 3, HeadKind::Multilabel)
            .with_width(0.125)
            .with_seed(5),
    )
    .unwrap();
    m.set_mode(Mode::Train);
    check_block(&mut m, model_params, tensor(&[2, 64, 64], 47), 6, |m, x| m.forward(x))
}
