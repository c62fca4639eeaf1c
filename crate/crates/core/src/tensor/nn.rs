use super::{gemm, numel_of, Float, Tensor};
use crate::error::{Error, Result};

/// Variance floor applied before the square root in [`stats_pool`].
pub const STD_VARIANCE_FLOOR: f64 = 1e-8;

fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "add")?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_op("add", a.shape().to_vec(), out, vec![a.clone(), b.clone()], |ctx| {
        Ok(vec![
            ctx.needs[0].then(|| ctx.grad.to_vec()),
            ctx.needs[1].then(|| ctx.grad.to_vec()),
        ])
    })
}

/// Elementwise product.
pub fn mul<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "mul")?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_op("mul", a.shape().to_vec(), out, vec![a.clone(), b.clone()], |ctx| {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        Ok(vec![
            ctx.needs[0].then(|| ctx.grad.iter().zip(b).map(|(&g, &v)| g * v).collect()),
            ctx.needs[1].then(|| ctx.grad.iter().zip(a).map(|(&g, &v)| g * v).collect()),
        ])
    })
}

pub fn scale<T: Float>(x: &Tensor<T>, k: f64) -> Result<Tensor<T>> {
    let k = T::of(k);
    let out = x.data().iter().map(|&v| v * k).collect();
    Tensor::from_op("scale", x.shape().to_vec(), out, vec![x.clone()], move |ctx| {
        Ok(vec![Some(ctx.grad.iter().map(|&g| g * k).collect())])
    })
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.data().iter().copied().sum();
    let n = x.numel();
    Tensor::from_op("sum", vec![], vec![s], vec![x.clone()], move |ctx| {
        Ok(vec![Some(vec![ctx.grad[0]; n])])
    })
}

pub fn reshape<T: Float>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if numel_of(shape) != x.numel() {
        return Err(Error::Shape(format!(
            "cannot reshape {:?} into {shape:?}",
            x.shape()
        )));
    }
    Tensor::from_op("reshape", shape.to_vec(), x.to_vec(), vec![x.clone()], |ctx| {
        Ok(vec![Some(ctx.grad.to_vec())])
    })
}

/// `x: [N, D_in]`, `weight: [D_out, D_in]`, `bias: [D_out]` → `x·Wᵀ + b`.
pub fn dense<T: Float>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bias.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "dense input {xs:?} incompatible with weight {ws:?} / bias {:?}",
            bias.shape()
        )));
    }
    let (n, din, dout) = (xs[0], xs[1], ws[0]);
    let mut out = vec![T::zero(); n * dout];
    gemm(n, din, dout, x.data(), false, weight.data(), true, &mut out, false);
    for row in out.chunks_mut(dout) {
        row.iter_mut().zip(bias.data()).for_each(|(o, &b)| *o += b);
    }
    Tensor::from_op(
        "dense",
        vec![n, dout],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        move |ctx| {
            let g = ctx.grad;
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); n * din];
                gemm(n, dout, din, g, false, ctx.inputs[1].data(), false, &mut dx, false);
                dx
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); dout * din];
                gemm(dout, n, din, g, true, ctx.inputs[0].data(), false, &mut dw, false);
                dw
            });
            let db = ctx.needs[2].then(|| {
                let mut db = vec![T::zero(); dout];
                for row in g.chunks(dout) {
                    db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                db
            });
            Ok(vec![dx, dw, db])
        },
    )
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_op("relu", x.shape().to_vec(), out, vec![x.clone()], |ctx| {
        Ok(vec![Some(
            ctx.grad
                .iter()
                .zip(ctx.out)
                .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                .collect(),
        )])
    })
}

pub(crate) fn sigmoid_scalar<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::from_op("sigmoid", x.shape().to_vec(), out, vec![x.clone()], |ctx| {
        Ok(vec![Some(
            ctx.grad
                .iter()
                .zip(ctx.out)
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect(),
        )])
    })
}

pub fn tanh<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x.data().iter().map(|&v| v.tanh()).collect();
    Tensor::from_op("tanh", x.shape().to_vec(), out, vec![x.clone()], |ctx| {
        Ok(vec![Some(
            ctx.grad
                .iter()
                .zip(ctx.out)
                .map(|(&g, &y)| g * (T::one() - y * y))
                .collect(),
        )])
    })
}

/// `(outer, len, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax<T: Float>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || x.shape()[axis] == 0 {
        return Err(Error::Shape(format!(
            "softmax axis {axis} invalid for shape {:?}",
            x.shape()
        )));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(xd[idx(k)]);
            }
            let mut s = T::zero();
            for k in 0..len {
                let e = (xd[idx(k)] - m).exp();
                out[idx(k)] = e;
                s += e;
            }
            for k in 0..len {
                out[idx(k)] /= s;
            }
        }
    }
    Tensor::from_op("softmax", x.shape().to_vec(), out, vec![x.clone()], move |ctx| {
        let (y, g) = (ctx.out, ctx.grad);
        let mut dx = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mut dot = T::zero();
                for k in 0..len {
                    dot += g[idx(k)] * y[idx(k)];
                }
                for k in 0..len {
                    dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                }
            }
        }
        Ok(vec![Some(dx)])
    })
}

/// Mean over the last axis: `[..., T] → [...]`.
pub fn mean_last<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let Some((&t, lead)) = x.shape().split_last() else {
        return Err(Error::Shape("mean_last on a scalar".into()));
    };
    if t == 0 {
        return Err(Error::InvalidInput("mean over an empty axis".into()));
    }
    let inv = T::of(1.0 / t as f64);
    let out = x.data().chunks(t).map(|row| row.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_op("mean_last", lead.to_vec(), out, vec![x.clone()], move |ctx| {
        Ok(vec![Some(ctx.grad.iter().flat_map(|&g| std::iter::repeat_n(g * inv, t)).collect())])
    })
}

/// Scales each `[N, C, T]` channel by the matching `[N, C]` gate.
pub fn mul_channels<T: Float>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 3 || gate.shape() != &xs[..2] {
        return Err(Error::Shape(format!(
            "mul_channels: gate {:?} does not match input {xs:?}",
            gate.shape()
        )));
    }
    let t = xs[2];
    let out = x
        .data()
        .chunks(t)
        .zip(gate.data())
        .flat_map(|(row, &s)| row.iter().map(move |&v| v * s))
        .collect();
    Tensor::from_op("mul_channels", xs.to_vec(), out, vec![x.clone(), gate.clone()], move |ctx| {
        let (xd, gd, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
        let dx = ctx.needs[0].then(|| {
            g.chunks(t)
                .zip(gd)
                .flat_map(|(row, &s)| row.iter().map(move |&v| v * s))
                .collect()
        });
        let dgate = ctx.needs[1].then(|| {
            g.chunks(t)
                .zip(xd.chunks(t))
                .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                .collect()
        });
        Ok(vec![dx, dgate])
    })
}

/// Slice `len` entries of `axis` starting at `start`.
pub fn narrow<T: Float>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return Err(Error::Shape(format!(
            "narrow({axis}, {start}, {len}) out of range for {:?}",
            x.shape()
        )));
    }
    let (outer, full, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&xd[base..base + len * inner]);
    }
    Tensor::from_op("narrow", shape, out, vec![x.clone()], move |ctx| {
        let mut dx = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let base = (o * full + start) * inner;
            dx[base..base + len * inner].copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
        }
        Ok(vec![Some(dx)])
    })
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<T: Float>(xs: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
    if axis >= first.rank() {
        return Err(Error::Shape(format!("concat axis {axis} invalid for {:?}", first.shape())));
    }
    for t in xs {
        let ok = t.rank() == first.rank()
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::Shape(format!(
                "concat along {axis}: {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let lens: Vec<usize> = xs.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (t, &l) in xs.iter().zip(&lens) {
            out.extend_from_slice(&t.data()[o * l * inner..(o + 1) * l * inner]);
        }
    }
    Tensor::from_op("concat", shape, out, xs.to_vec(), move |ctx| {
        let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (g, &l) in grads.iter_mut().zip(&lens) {
                g.extend_from_slice(&ctx.grad[pos..pos + l * inner]);
                pos += l * inner;
            }
        }
        Ok(grads.into_iter().map(Some).collect())
    })
}

/// Weighted per-channel mean and standard deviation over time.
///
/// `x: [N, C, T]`; `weights` is `[N, T]` (shared by all channels) or
/// `[N, C, T]`, each row summing to 1; `None` means uniform `1/T`. Returns
/// `[N, 2C]`: the means followed by `sqrt(max(var, 1e-8))`.
pub fn stats_pool<T: Float>(x: &Tensor<T>, weights: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::Shape(format!("stats_pool needs [N, C, T], got {xs:?}")));
    }
    let (n, c, t) = (xs[0], xs[1], xs[2]);
    if t == 0 {
        return Err(Error::InvalidInput("stats_pool over zero frames".into()));
    }
    let per_channel = match weights {
        None => false,
        Some(w) if w.shape() == [n, t] => false,
        Some(w) if w.shape() == [n, c, t] => true,
        Some(w) => {
            return Err(Error::Shape(format!(
                "stats_pool weights {:?} fit neither [N, T] nor [N, C, T] for input {xs:?}",
                w.shape()
            )))
        }
    };
    if let Some(w) = weights {
        let tol = 1e-6f64.max(t as f64 * T::epsilon().as_f64());
        for (r, row) in w.data().chunks(t).enumerate() {
            let s: f64 = row.iter().map(|v| v.as_f64()).sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "stats_pool weight row {r} sums to {s}, expected 1"
                )));
            }
        }
    }
    let uniform = T::of(1.0 / t as f64);
    let floor = T::of(STD_VARIANCE_FLOOR);
    let row_weights = move |wd: Option<&[T]>, b: usize, ch: usize| -> Option<std::ops::Range<usize>> {
        wd.map(|_| {
            let r = if per_channel { b * c + ch } else { b };
            r * t..(r + 1) * t
        })
    };
    let xd = x.data();
    let wd = weights.map(|w| w.data());
    let mut out = vec![T::zero(); n * 2 * c];
    for b in 0..n {
        for ch in 0..c {
            let xr = &xd[(b * c + ch) * t..(b * c + ch + 1) * t];
            let wr = row_weights(wd, b, ch).map(|r| &wd.unwrap()[r]);
            let w_at = |k: usize| wr.map_or(uniform, |w| w[k]);
            let mut m = T::zero();
            for (k, &v) in xr.iter().enumerate() {
                m += w_at(k) * v;
            }
            let mut var = T::zero();
            for (k, &v) in xr.iter().enumerate() {
                var += w_at(k) * (v - m) * (v - m);
            }
            out[b * 2 * c + ch] = m;
            out[b * 2 * c + c + ch] = var.max(floor).sqrt();
        }
    }
    let mut inputs = vec![x.clone()];
    if let Some(w) = weights {
        inputs.push(w.clone());
    }
    Tensor::from_op("stats_pool", vec![n, 2 * c], out, inputs, move |ctx| {
        let xd = ctx.inputs[0].data();
        let wd = ctx.inputs.get(1).map(|w| w.data());
        let (y, g) = (ctx.out, ctx.grad);
        let mut dx = vec![T::zero(); xd.len()];
        let mut dw = wd.map(|w| vec![T::zero(); w.len()]);
        let two = T::of(2.0);
        for b in 0..n {
            for ch in 0..c {
                let xr = &xd[(b * c + ch) * t..(b * c + ch + 1) * t];
                let range = row_weights(wd, b, ch);
                let wr = range.clone().map(|r| &wd.unwrap()[r]);
                let w_at = |k: usize| wr.map_or(uniform, |w| w[k]);
                let m = y[b * 2 * c + ch];
                let sd = y[b * 2 * c + c + ch];
                let g_mean = g[b * 2 * c + ch];
                // gradient of sqrt(max(var, floor)); zero where the floor is active
                let g_var = if sd * sd > floor { g[b * 2 * c + c + ch] / (two * sd) } else { T::zero() };
                let centered: T = xr.iter().enumerate().map(|(k, &v)| w_at(k) * (v - m)).sum();
                // var = Σ w (x − m)², m = Σ w x
                // ∂var/∂x_k = 2 w_k (x_k − m) − 2 w_k Σ_s w_s (x_s − m)
                // ∂var/∂w_k = (x_k − m)² − 2 x_k Σ_s w_s (x_s − m)
                let dxr = &mut dx[(b * c + ch) * t..(b * c + ch + 1) * t];
                for (k, (d, &v)) in dxr.iter_mut().zip(xr).enumerate() {
                    let wk = w_at(k);
                    *d = g_mean * wk + g_var * two * wk * (v - m - centered);
                }
                if let (Some(dw), Some(r)) = (dw.as_mut(), range) {
                    for (k, d) in dw[r].iter_mut().enumerate() {
                        let v = xr[k];
                        *d += g_mean * v + g_var * ((v - m) * (v - m) - two * v * centered);
                    }
                }
            }
        }
        let mut grads = vec![Some(dx)];
        if ctx.inputs.len() > 1 {
            grads.push(dw);
        }
        Ok(grads)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_stable() {
        let x = t64(&[2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 40.0]);
        let y = softmax(&x, 1).unwrap();
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-7);
        }
        let big = Tensor::<f32>::new(&[1, 2], vec![1000.0, 1000.0]).unwrap();
        assert_eq!(softmax(&big, 1).unwrap().data(), [0.5, 0.5]);
        // along axis 0
        let y0 = softmax(&x, 0).unwrap();
        for k in 0..3 {
            assert!((y0.data()[k] + y0.data()[3 + k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_of_zero_is_half_and_saturates_cleanly() {
        let x = Tensor::<f32>::new(&[3], vec![0.0, 1000.0, -1000.0]).unwrap();
        assert_eq!(sigmoid(&x).unwrap().data(), [0.5, 1.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = t64(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = t64(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero = t64(&[3], vec![0.0; 3]);
        assert_eq!(dense(&x, &eye, &zero).unwrap().data(), x.data());
        let w0 = t64(&[2, 3], vec![0.0; 6]);
        let b = t64(&[2], vec![0.5, -1.5]);
        assert_eq!(dense(&x, &w0, &b).unwrap().data(), [0.5, -1.5, 0.5, -1.5]);
        assert!(matches!(dense(&x, &t64(&[2, 2], vec![0.0; 4]), &b), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_matches_loops() {
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.91).cos()).collect();
        let b = vec![0.1, 0.2, -0.3, 0.4];
        let y = dense(&t64(&[2, 3], x.clone()), &t64(&[4, 3], w.clone()), &t64(&[4], b.clone())).unwrap();
        for n in 0..2 {
            for o in 0..4 {
                let e: f64 = (0..3).map(|i| x[n * 3 + i] * w[o * 3 + i]).sum::<f64>() + b[o];
                assert!((y.data()[n * 4 + o] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stats_pool_constant_input() {
        let x = t64(&[1, 2, 5], vec![3.0; 10]);
        let y = stats_pool(&x, None).unwrap();
        let floor_std = STD_VARIANCE_FLOOR.sqrt();
        assert!(y.data()[..2].iter().all(|&m| (m - 3.0).abs() < 1e-12));
        assert!(y.data()[2..].iter().all(|&s| (s - floor_std).abs() < 1e-15));
    }

    #[test]
    fn uniform_weights_equal_plain_pooling() {
        let x = t64(&[2, 3, 4], (0..24).map(|i| (i as f64 * 1.3).sin()).collect());
        let plain = stats_pool(&x, None).unwrap();
        let w = t64(&[2, 4], vec![0.25; 8]);
        let weighted = stats_pool(&x, Some(&w)).unwrap();
        for (a, b) in plain.data().iter().zip(weighted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_pool_matches_loop_oracle() {
        let (n, c, t) = (2, 3, 7);
        let xv: Vec<f64> = (0..n * c * t).map(|i| (i as f64 * 0.71).cos() * 2.0).collect();
        let raw: Vec<f64> = (0..n * c * t).map(|i| 1.0 + (i as f64 * 0.29).sin().abs()).collect();
        let mut wv = raw.clone();
        for row in wv.chunks_mut(t) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = stats_pool(&t64(&[n, c, t], xv.clone()), Some(&t64(&[n, c, t], wv.clone()))).unwrap();
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * t;
                let mean: f64 = (0..t).map(|k| wv[r + k] * xv[r + k]).sum();
                let ex2: f64 = (0..t).map(|k| wv[r + k] * xv[r + k] * xv[r + k]).sum();
                let sd = (ex2 - mean * mean).max(1e-8).sqrt();
                assert!((y.data()[b * 2 * c + ch] - mean).abs() < 1e-6);
                assert!((y.data()[b * 2 * c + c + ch] - sd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stats_pool_rejects_bad_weights() {
        let x = t64(&[1, 1, 3], vec![1.0, 2.0, 3.0]);
        assert!(stats_pool(&x, Some(&t64(&[1, 3], vec![0.5, 0.5, 0.5]))).is_err());
        assert!(stats_pool(&x, Some(&t64(&[1, 2], vec![0.5, 0.5]))).is_err());
        assert!(matches!(stats_pool(&t64(&[1, 1, 0], vec![]), None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn narrow_concat_round_trip() {
        let x = t64(&[2, 6, 3], (0..36).map(|i| i as f64).collect());
        let parts: Vec<_> = (0..3).map(|i| narrow(&x, 1, i * 2, 2).unwrap()).collect();
        assert_eq!(concat(&parts, 1).unwrap().data(), x.data());
    }

    #[test]
    fn mul_channels_and_mean() {
        let x = t64(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = t64(&[1, 2], vec![2.0, 0.5]);
        assert_eq!(mul_channels(&x, &g).unwrap().data(), [2.0, 4.0, 6.0, 2.0, 2.5, 3.0]);
        assert_eq!(mean_last(&x).unwrap().data(), [2.0, 5.0]);
    }
}
