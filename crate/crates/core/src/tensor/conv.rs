//! Convolutions lowered to im2col + GEMM, one sample at a time.
//!
//! A 1D convolution is the `H = 1` case of the 2D kernel. Per-sample weight
//! gradients are reduced in sample order so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::{gemm, Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    dh: usize,
    dw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_sample(&self) -> usize {
        self.ci * self.h * self.w
    }

    /// 1×1 kernels with unit stride and no padding read the input as-is.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn im2col<T: Float>(&self, x: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.ci {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let off_w = (j * self.dw) as isize - self.pw as isize;
                    for oy in 0..self.oh {
                        let iy = (oy * self.sh + i * self.dh) as isize - self.ph as isize;
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        if self.sw == 1 {
                            let lo = (-off_w).clamp(0, self.ow as isize) as usize;
                            let hi = (self.w as isize - off_w).clamp(lo as isize, self.ow as isize) as usize;
                            drow[..lo].fill(T::zero());
                            drow[lo..hi].copy_from_slice(
                                &src[(lo as isize + off_w) as usize..(hi as isize + off_w) as usize],
                            );
                            drow[hi..].fill(T::zero());
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * self.sw) as isize + off_w;
                                *d = if ix >= 0 && ix < self.w as isize {
                                    src[ix as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds patch gradients back onto the input layout.
    fn col2im<T: Float>(&self, cols: &[T], dx: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.ci {
            let dxc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let off_w = (j * self.dw) as isize - self.pw as isize;
                    for oy in 0..self.oh {
                        let iy = (oy * self.sh + i * self.dh) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let drow = &mut dxc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let srow = &src[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, &g) in srow.iter().enumerate() {
                            let ix = (ox * self.sw) as isize + off_w;
                            if ix >= 0 && ix < self.w as isize {
                                drow[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn out_len(size: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let eff = (k - 1) * dil + 1;
    let padded = size + 2 * pad;
    (eff <= padded).then(|| (padded - eff) / stride + 1)
}

fn check_bias<T: Float>(bias: Option<&Tensor<T>>, co: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::Shape(format!(
                "conv bias shape {:?} does not match {co} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

/// 2D cross-correlation with zero padding.
///
/// `x: [N, C_in, H, W]`, `weight: [C_out, C_in, kH, kW]`, optional
/// `bias: [C_out]`; output `[N, C_out, H', W']` with
/// `H' = (H + 2·pH − kH) / sH + 1`.
pub fn conv2d<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(Error::Shape(format!(
            "conv2d input {xs:?} incompatible with weight {ws:?}"
        )));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    let oh = out_len(xs[2], ws[2], stride.0, padding.0, 1);
    let ow = out_len(xs[3], ws[3], stride.1, padding.1, 1);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::Shape(format!(
            "conv2d kernel {ws:?} larger than padded input {xs:?} (padding {padding:?})"
        )));
    };
    check_bias(bias, ws[0])?;
    let g = Geometry {
        n: xs[0],
        ci: xs[1],
        h: xs[2],
        w: xs[3],
        co: ws[0],
        kh: ws[2],
        kw: ws[3],
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        dh: 1,
        dw: 1,
        oh,
        ow,
    };
    run(x, weight, bias, g, vec![g.n, g.co, oh, ow], "conv2d")
}

/// Dilated 1D cross-correlation with zero padding.
///
/// `x: [N, C_in, T]`, `weight: [C_out, C_in, k]`; output `[N, C_out, T']`
/// with `T' = (T + 2·padding − (k−1)·dilation − 1) / stride + 1`, where
/// `out[t] = Σ_j w[j] · x[t·stride + j·dilation − padding]`.
pub fn conv1d<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
        return Err(Error::Shape(format!(
            "conv1d input {xs:?} incompatible with weight {ws:?}"
        )));
    }
    if stride == 0 || dilation == 0 {
        return Err(Error::Config("conv1d stride and dilation must be positive".into()));
    }
    let Some(ot) = out_len(xs[2], ws[2], stride, padding, dilation) else {
        return Err(Error::Shape(format!(
            "conv1d kernel {ws:?} with dilation {dilation} spans more than padded input {xs:?}"
        )));
    };
    check_bias(bias, ws[0])?;
    let g = Geometry {
        n: xs[0],
        ci: xs[1],
        h: 1,
        w: xs[2],
        co: ws[0],
        kh: 1,
        kw: ws[2],
        sh: 1,
        sw: stride,
        ph: 0,
        pw: padding,
        dh: 1,
        dw: dilation,
        oh: 1,
        ow: ot,
    };
    run(x, weight, bias, g, vec![g.n, g.co, ot], "conv1d")
}

fn run<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Geometry,
    out_shape: Vec<usize>,
    op: &'static str,
) -> Result<Tensor<T>> {
    let plane = g.out_plane();
    let patch = g.patch();
    let mut out = vec![T::zero(); g.n * g.co * plane];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.map(|b| b.data());
        out.par_chunks_mut(g.co * plane).enumerate().for_each_init(
            || vec![T::zero(); if g.is_pointwise() { 0 } else { patch * plane }],
            |cols, (b, o)| {
                let xb = &xd[b * g.in_sample()..(b + 1) * g.in_sample()];
                let src: &[T] = if g.is_pointwise() {
                    xb
                } else {
                    g.im2col(xb, cols);
                    cols
                };
                gemm(g.co, patch, plane, wd, false, src, false, o, false);
                if let Some(bd) = bd {
                    for (row, &bv) in o.chunks_mut(plane).zip(bd) {
                        row.iter_mut().for_each(|v| *v += bv);
                    }
                }
            },
        );
    }
    let mut inputs = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    Tensor::from_op(op, out_shape, out, inputs, move |ctx| {
        let xd = ctx.inputs[0].data();
        let wd = ctx.inputs[1].data();
        let gd = ctx.grad;
        let mut grads = vec![None, None, None];

        if ctx.needs[0] {
            let mut dx = vec![T::zero(); g.n * g.in_sample()];
            dx.par_chunks_mut(g.in_sample()).enumerate().for_each_init(
                || vec![T::zero(); if g.is_pointwise() { 0 } else { patch * plane }],
                |dcols, (b, dxb)| {
                    let gb = &gd[b * g.co * plane..(b + 1) * g.co * plane];
                    if g.is_pointwise() {
                        gemm(patch, g.co, plane, wd, true, gb, false, dxb, false);
                    } else {
                        gemm(patch, g.co, plane, wd, true, gb, false, dcols, false);
                        g.col2im(dcols, dxb);
                    }
                },
            );
            grads[0] = Some(dx);
        }

        if ctx.needs[1] {
            let partials: Vec<Vec<T>> = (0..g.n)
                .into_par_iter()
                .map(|b| {
                    let xb = &xd[b * g.in_sample()..(b + 1) * g.in_sample()];
                    let gb = &gd[b * g.co * plane..(b + 1) * g.co * plane];
                    let mut cols = Vec::new();
                    let src: &[T] = if g.is_pointwise() {
                        xb
                    } else {
                        cols.resize(patch * plane, T::zero());
                        g.im2col(xb, &mut cols);
                        &cols
                    };
                    let mut p = vec![T::zero(); g.co * patch];
                    gemm(g.co, plane, patch, gb, false, src, true, &mut p, false);
                    p
                })
                .collect();
            let mut dw = vec![T::zero(); g.co * patch];
            for p in &partials {
                dw.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
            }
            grads[1] = Some(dw);
        }

        if ctx.inputs.len() > 2 && ctx.needs[2] {
            let mut db = vec![T::zero(); g.co];
            for b in 0..g.n {
                for (c, acc) in db.iter_mut().enumerate() {
                    let row = &gd[(b * g.co + c) * plane..(b * g.co + c + 1) * plane];
                    for &v in row {
                        *acc += v;
                    }
                }
            }
            grads[2] = Some(db);
        }
        grads.truncate(ctx.inputs.len());
        Ok(grads)
    })
}
