//! 3x3, stride-1, zero-padding-1 convolution kernels (forward and backward).
//!
//! The spatial loops are phrased as shifted-row accumulations so the inner
//! loop is a contiguous multiply-add over one image row, which the compiler
//! vectorizes. All reduction orders are fixed, so results are deterministic
//! within one build configuration.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) const KERNEL: usize = 3;
const PAD: isize = 1;

pub(crate) fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<()> {
    if input.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "conv2d input must be [C_in, H, W], got {:?}",
            input.shape()
        )));
    }
    if kernel.rank() != 4 || kernel.shape()[2] != KERNEL || kernel.shape()[3] != KERNEL {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel must be [C_out, C_in, 3, 3], got {:?}",
            kernel.shape()
        )));
    }
    if kernel.shape()[1] != input.shape()[0] {
        return Err(Error::shape_mismatch(
            "conv2d input channels",
            input.shape(),
            kernel.shape(),
        ));
    }
    if bias.rank() != 1 || bias.shape()[0] != kernel.shape()[0] {
        return Err(Error::shape_mismatch(
            "conv2d bias",
            bias.shape(),
            &kernel.shape()[..1],
        ));
    }
    Ok(())
}

/// out[co, i, j] = bias[co] + sum_{ci, dy, dx} k[co, ci, dy, dx] * in[ci, i+dy-1, j+dx-1]
pub(crate) fn forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_conv_shapes(input, kernel, bias)?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let c_out = kernel.shape()[0];
    let mut out = vec![T::zero(); c_out * h * w];
    let in_data = input.data();
    let k_data = kernel.data();
    let b_data = bias.data();

    for co in 0..c_out {
        let out_ch = &mut out[co * h * w..(co + 1) * h * w];
        out_ch.fill(b_data[co]);
        for ci in 0..c_in {
            let in_ch = &in_data[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * c_in + ci) * KERNEL * KERNEL;
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    let weight = k_data[k_base + dy * KERNEL + dx];
                    shifted_axpy(out_ch, in_ch, h, w, dy as isize - PAD, dx as isize - PAD, weight);
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

/// dst[i, j] += weight * src[i + sy, j + sx] over the in-range overlap.
fn shifted_axpy<T: Scalar>(dst: &mut [T], src: &[T], h: usize, w: usize, sy: isize, sx: isize, weight: T) {
    let i0 = (-sy).max(0) as usize;
    let i1 = (h as isize).min(h as isize - sy).max(0) as usize;
    let j0 = (-sx).max(0) as usize;
    let j1 = (w as isize).min(w as isize - sx).max(0) as usize;
    if j0 >= j1 {
        return;
    }
    for i in i0..i1 {
        let si = (i as isize + sy) as usize;
        let d = &mut dst[i * w + j0..i * w + j1];
        let s = &src[si * w + (j0 as isize + sx) as usize..][..j1 - j0];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += weight * *sv;
        }
    }
}

/// Gradient w.r.t. the input: correlation of the upstream gradient with the
/// kernel flipped in both spatial axes (the exact transpose of `forward`).
pub(crate) fn backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    c_in: usize,
) -> Tensor<T> {
    let (c_out, h, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let mut gin = vec![T::zero(); c_in * h * w];
    let g_data = grad_out.data();
    let k_data = kernel.data();

    for ci in 0..c_in {
        let gin_ch = &mut gin[ci * h * w..(ci + 1) * h * w];
        for co in 0..c_out {
            let g_ch = &g_data[co * h * w..(co + 1) * h * w];
            let k_base = (co * c_in + ci) * KERNEL * KERNEL;
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    let weight = k_data[k_base + dy * KERNEL + dx];
                    // gin[y, x] += k[dy, dx] * gout[y - (dy-1), x - (dx-1)]
                    shifted_axpy(gin_ch, g_ch, h, w, PAD - dy as isize, PAD - dx as isize, weight);
                }
            }
        }
    }
    Tensor::new(vec![c_in, h, w], gin).expect("shape consistent by construction")
}

/// Gradient w.r.t. the kernel: per-tap dot products of the upstream gradient
/// with the shifted input.
pub(crate) fn backward_kernel<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
    let (c_out, h, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let c_in = input.shape()[0];
    let mut gk = vec![T::zero(); c_out * c_in * KERNEL * KERNEL];
    let g_data = grad_out.data();
    let in_data = input.data();

    for co in 0..c_out {
        let g_ch = &g_data[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let in_ch = &in_data[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * c_in + ci) * KERNEL * KERNEL;
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    gk[k_base + dy * KERNEL + dx] =
                        shifted_dot(g_ch, in_ch, h, w, dy as isize - PAD, dx as isize - PAD);
                }
            }
        }
    }
    Tensor::new(vec![c_out, c_in, KERNEL, KERNEL], gk).expect("shape consistent by construction")
}

/// sum_{i, j} a[i, j] * b[i + sy, j + sx] over the in-range overlap.
fn shifted_dot<T: Scalar>(a: &[T], b: &[T], h: usize, w: usize, sy: isize, sx: isize) -> T {
    let i0 = (-sy).max(0) as usize;
    let i1 = (h as isize).min(h as isize - sy).max(0) as usize;
    let j0 = (-sx).max(0) as usize;
    let j1 = (w as isize).min(w as isize - sx).max(0) as usize;
    let mut acc = T::zero();
    if j0 >= j1 {
        return acc;
    }
    for i in i0..i1 {
        let si = (i as isize + sy) as usize;
        let av = &a[i * w + j0..i * w + j1];
        let bv = &b[si * w + (j0 as isize + sx) as usize..][..j1 - j0];
        let mut row = T::zero();
        for (x, y) in av.iter().zip(bv) {
            row += *x * *y;
        }
        acc += row;
    }
    acc
}

pub(crate) fn backward_bias<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (c_out, h, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let g_data = grad_out.data();
    let mut gb = vec![T::zero(); c_out];
    for co in 0..c_out {
        let mut acc = T::zero();
        for &v in &g_data[co * h * w..(co + 1) * h * w] {
            acc += v;
        }
        gb[co] = acc;
    }
    Tensor::new(vec![c_out], gb).expect("shape consistent by construction")
}
