//! Max pooling with arbitrary (possibly overlapping) windows.
//!
//! `candle` only differentiates max pooling when kernel == stride; the
//! AlexNet-style trunk uses 3x3 windows with stride 2, so both directions are
//! implemented here as custom ops. The gradient is routed to the first
//! maximal element of each window in row-major order.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor};

use crate::error::Result;

pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(MaxPool { kernel, stride })?)
}

fn out_len(n: usize, k: usize, s: usize) -> usize {
    if n < k {
        0
    } else {
        (n - k) / s + 1
    }
}

struct MaxPool {
    kernel: usize,
    stride: usize,
}

struct MaxPoolGrad {
    kernel: usize,
    stride: usize,
}

trait Float: Copy + PartialOrd + std::ops::AddAssign + Default {}
impl Float for f32 {}
impl Float for f64 {}

/// Index (into the input plane) of the first maximum of every window.
fn argmax_windows<T: Float>(plane: &[T], h: usize, w: usize, k: usize, s: usize) -> Vec<usize> {
    let (oh, ow) = (out_len(h, k, s), out_len(w, k, s));
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut best = (oy * s) * w + ox * s;
            for dy in 0..k {
                for dx in 0..k {
                    let idx = (oy * s + dy) * w + ox * s + dx;
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

fn forward<T: Float>(data: &[T], dims: (usize, usize, usize, usize), k: usize, s: usize) -> Vec<T> {
    let (n, c, h, w) = dims;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c * out_len(h, k, s) * out_len(w, k, s));
    for p in data.chunks_exact(plane).take(n * c) {
        out.extend(argmax_windows(p, h, w, k, s).into_iter().map(|i| p[i]));
    }
    out
}

fn backward<T: Float>(
    data: &[T],
    grad: &[T],
    dims: (usize, usize, usize, usize),
    k: usize,
    s: usize,
) -> Vec<T> {
    let (n, c, h, w) = dims;
    let plane = h * w;
    let oplane = out_len(h, k, s) * out_len(w, k, s);
    let mut out = vec![T::default(); n * c * plane];
    for (pi, (p, g)) in data.chunks_exact(plane).zip(grad.chunks_exact(oplane)).enumerate() {
        let dst = &mut out[pi * plane..(pi + 1) * plane];
        for (o, idx) in argmax_windows(p, h, w, k, s).into_iter().enumerate() {
            dst[idx] += g[o];
        }
    }
    out
}

fn contiguous<'a, T>(v: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("max_pool2d expects a contiguous input"),
    }
}

impl CustomOp1 for MaxPool {
    fn name(&self) -> &'static str {
        "max-pool2d-overlapping"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims4()?;
        let (k, s) = (self.kernel, self.stride);
        let shape = Shape::from((dims.0, dims.1, out_len(dims.2, k, s), out_len(dims.3, k, s)));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(forward(contiguous(v, layout)?, dims, k, s)),
            CpuStorage::F64(v) => CpuStorage::F64(forward(contiguous(v, layout)?, dims, k, s)),
            _ => candle_core::bail!("max_pool2d supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = arg.contiguous()?.apply_op2_no_bwd(
            &grad_res.contiguous()?,
            &MaxPoolGrad {
                kernel: self.kernel,
                stride: self.stride,
            },
        )?;
        Ok(Some(g))
    }
}

impl CustomOp2 for MaxPoolGrad {
    fn name(&self) -> &'static str {
        "max-pool2d-overlapping-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let (k, s) = (self.kernel, self.stride);
        let out = match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(g)) => {
                CpuStorage::F32(backward(contiguous(a, l1)?, contiguous(g, l2)?, dims, k, s))
            }
            (CpuStorage::F64(a), CpuStorage::F64(g)) => {
                CpuStorage::F64(backward(contiguous(a, l1)?, contiguous(g, l2)?, dims, k, s))
            }
            _ => candle_core::bail!("max_pool2d grad supports matching f32/f64 only"),
        };
        Ok((out, l1.shape().clone()))
    }
}
