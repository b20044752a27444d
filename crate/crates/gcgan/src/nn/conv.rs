//! Convolution kernels: forward, transposed (adjoint) and weight-gradient.
//!
//! All three are expressed through one im2col geometry so that
//! `deconv2d` is the exact adjoint of `conv2d` and `conv2d_dw` the exact
//! weight gradient. Same padding throughout: a stride-2 conv maps spatial
//! size 2n to n and the matching deconv maps n back to 2n.
//!
//! Work is split over fixed 8-sample chunks; every floating-point reduction
//! happens in a fixed order, so results do not depend on thread scheduling.

use super::tensor::{Scalar, Tensor};
use super::NnError;
use rayon::prelude::*;

const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Geometry of a same-padded conv taking `[n,ci,h,w]` to `[n,co,oh,ow]`.
    pub fn for_conv(x_shape: &[usize], w_shape: &[usize], stride: usize) -> Result<Self, NnError> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(NnError::Shape(format!(
                "conv wants 4-d input and weight, got {x_shape:?} / {w_shape:?}"
            )));
        }
        let (n, ci, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (co, wci, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if wci != ci {
            return Err(NnError::Shape(format!(
                "conv weight expects {wci} input channels, input has {ci}"
            )));
        }
        if kh != kw {
            return Err(NnError::Shape(format!("square kernels only, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(NnError::Shape("stride must be positive".into()));
        }
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let pad_total = ((oh - 1) * stride + kh).saturating_sub(h);
        Ok(ConvGeom {
            n,
            ci,
            h,
            w,
            co,
            k: kh,
            stride,
            oh,
            ow,
            pad: pad_total / 2,
        })
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let kk = k * k;
    let row_len = g.ci * kk;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * row_len;
            for ci in 0..g.ci {
                let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                let base = row + ci * kk;
                for a in 0..k {
                    let iy = (oy * s + a) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        for b in 0..k {
                            cols[base + a * k + b] = T::ZERO;
                        }
                        continue;
                    }
                    let line = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for b in 0..k {
                        let ix = (ox * s + b) as isize - p;
                        cols[base + a * k + b] = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let kk = k * k;
    let row_len = g.ci * kk;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * row_len;
            for ci in 0..g.ci {
                let base = row + ci * kk;
                let plane = ci * g.h * g.w;
                for a in 0..k {
                    let iy = (oy * s + a) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for b in 0..k {
                        let ix = (ox * s + b) as isize - p;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let idx = plane + iy as usize * g.w + ix as usize;
                        x[idx] = x[idx].add(cols[base + a * k + b]);
                    }
                }
            }
        }
    }
}

/// Same-padded cross-correlation, `[n,ci,h,w] * [co,ci,k,k] -> [n,co,oh,ow]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize) -> Result<Tensor<T>, NnError> {
    let g = ConvGeom::for_conv(x.shape(), w.shape(), stride)?;
    let mut out = Tensor::zeros(vec![g.n, g.co, g.oh, g.ow]);
    let in_sz = g.ci * g.h * g.w;
    let out_sz = g.co * g.oh * g.ow;
    let row_len = g.ci * g.k * g.k;
    let ohw = g.oh * g.ow;
    let xs = x.data();
    let ws = w.data();
    out.data_mut()
        .par_chunks_mut(CHUNK * out_sz)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let mut cols = vec![T::ZERO; ohw * row_len];
            for (i, y_n) in out_chunk.chunks_mut(out_sz).enumerate() {
                let n = chunk_idx * CHUNK + i;
                im2col(&xs[n * in_sz..(n + 1) * in_sz], &g, &mut cols);
                // y_n[co, ohw] = w[co, row_len] x cols^T[row_len, ohw]
                unsafe {
                    T::gemm(
                        g.co,
                        row_len,
                        ohw,
                        T::ONE,
                        ws.as_ptr(),
                        row_len as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        row_len as isize,
                        T::ZERO,
                        y_n.as_mut_ptr(),
                        ohw as isize,
                        1,
                    );
                }
            }
        });
    Ok(out)
}

/// Adjoint of `conv2d`: scatters `[n,co,oh,ow]` back to `[n,ci,out_h,out_w]`
/// through the same weight. Doubles as the deconvolution layer forward.
pub fn deconv2d<T: Scalar>(
    y: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    out_hw: (usize, usize),
) -> Result<Tensor<T>, NnError> {
    let x_shape = [y.shape()[0], w.shape()[1], out_hw.0, out_hw.1];
    let g = ConvGeom::for_conv(&x_shape, w.shape(), stride)?;
    if g.oh != y.shape()[2] || g.ow != y.shape()[3] || g.co != y.shape()[1] {
        return Err(NnError::Shape(format!(
            "deconv geometry mismatch: {:?} with stride {stride} does not map to {:?}",
            x_shape,
            y.shape()
        )));
    }
    let mut out = Tensor::zeros(x_shape.to_vec());
    let in_sz = g.ci * g.h * g.w;
    let out_sz = g.co * g.oh * g.ow;
    let row_len = g.ci * g.k * g.k;
    let ohw = g.oh * g.ow;
    let ys = y.data();
    let ws = w.data();
    out.data_mut()
        .par_chunks_mut(CHUNK * in_sz)
        .enumerate()
        .for_each(|(chunk_idx, x_chunk)| {
            let mut cols = vec![T::ZERO; ohw * row_len];
            for (i, x_n) in x_chunk.chunks_mut(in_sz).enumerate() {
                let n = chunk_idx * CHUNK + i;
                let y_n = &ys[n * out_sz..(n + 1) * out_sz];
                // cols[ohw, row_len] = y_n^T[ohw, co] x w[co, row_len]
                unsafe {
                    T::gemm(
                        ohw,
                        g.co,
                        row_len,
                        T::ONE,
                        y_n.as_ptr(),
                        1,
                        ohw as isize,
                        ws.as_ptr(),
                        row_len as isize,
                        1,
                        T::ZERO,
                        cols.as_mut_ptr(),
                        row_len as isize,
                        1,
                    );
                }
                col2im_add(&cols, &g, x_n);
            }
        });
    Ok(out)
}

/// Weight gradient: correlates the conv input with the output gradient,
/// `([n,ci,h,w], [n,co,oh,ow]) -> [co,ci,k,k]`.
pub fn conv2d_dw<T: Scalar>(
    x: &Tensor<T>,
    grad_y: &Tensor<T>,
    stride: usize,
    k: usize,
) -> Result<Tensor<T>, NnError> {
    let w_shape = [grad_y.shape()[1], x.shape()[1], k, k];
    let g = ConvGeom::for_conv(x.shape(), &w_shape, stride)?;
    if g.oh != grad_y.shape()[2] || g.ow != grad_y.shape()[3] || g.n != grad_y.shape()[0] {
        return Err(NnError::Shape(format!(
            "conv weight-grad geometry mismatch: x {:?}, grad {:?}",
            x.shape(),
            grad_y.shape()
        )));
    }
    let in_sz = g.ci * g.h * g.w;
    let out_sz = g.co * g.oh * g.ow;
    let row_len = g.ci * g.k * g.k;
    let ohw = g.oh * g.ow;
    let xs = x.data();
    let gs = grad_y.data();
    let n_chunks = g.n.div_ceil(CHUNK);
    // Per-chunk partials, then a sequential sum in chunk order.
    let partials: Vec<Vec<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut dw = vec![T::ZERO; g.co * row_len];
            let mut cols = vec![T::ZERO; ohw * row_len];
            for n in c * CHUNK..((c + 1) * CHUNK).min(g.n) {
                im2col(&xs[n * in_sz..(n + 1) * in_sz], &g, &mut cols);
                // dw[co, row_len] += g_n[co, ohw] x cols[ohw, row_len]
                unsafe {
                    T::gemm(
                        g.co,
                        ohw,
                        row_len,
                        T::ONE,
                        gs[n * out_sz..].as_ptr(),
                        ohw as isize,
                        1,
                        cols.as_ptr(),
                        row_len as isize,
                        1,
                        T::ONE,
                        dw.as_mut_ptr(),
                        row_len as isize,
                        1,
                    );
                }
            }
            dw
        })
        .collect();
    let mut dw = vec![T::ZERO; g.co * row_len];
    for p in partials {
        for (d, s) in dw.iter_mut().zip(p) {
            *d = d.add(s);
        }
    }
    Tensor::new(w_shape.to_vec(), dw)
}

/// `[m,k] x [k,n] -> [m,n]` (single deterministic GEMM call).
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(NnError::Shape(format!(
            "matmul shapes {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(vec![m, n]);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            n as isize,
            1,
            T::ZERO,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

pub fn transpose2d<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if a.shape().len() != 2 {
        return Err(NnError::Shape(format!("transpose wants 2-d, got {:?}", a.shape())));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = Tensor::zeros(vec![n, m]);
    let src = a.data();
    let dst = out.data_mut();
    for i in 0..m {
        for j in 0..n {
            dst[j * m + i] = src[i * n + j];
        }
    }
    Ok(out)
}
