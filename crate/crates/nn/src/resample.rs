//! Parameter-free resampling layers: pixel shuffle, nearest and linear
//! upsampling.

use crate::{Scalar, Shape, Tensor};

/// `(n, c*r*r, 1, h, w) -> (n, c, 1, h*r, w*r)`; channel `c*r*r + i*r + j`
/// lands at sub-pixel `(i, j)`.
pub(crate) fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    assert!(s.d == 1 && s.c % (r * r) == 0, "pixel shuffle needs planar input with c % r^2 == 0");
    let c = s.c / (r * r);
    let out_shape = Shape::planar(s.n, c, s.h * r, s.w * r);
    let mut y = Tensor::zeros(out_shape);
    shuffle_apply(s, r, |src, dst| y.data_mut()[dst] = x.data()[src]);
    y
}

pub(crate) fn pixel_unshuffle<T: Scalar>(gy: &Tensor<T>, in_shape: Shape, r: usize) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    shuffle_apply(in_shape, r, |src, dst| gx.data_mut()[src] = gy.data()[dst]);
    gx
}

fn shuffle_apply(s: Shape, r: usize, mut f: impl FnMut(usize, usize)) {
    let c = s.c / (r * r);
    let (oh, ow) = (s.h * r, s.w * r);
    for n in 0..s.n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    for y in 0..s.h {
                        for x in 0..s.w {
                            let src = ((n * s.c + ci) * s.h + y) * s.w + x;
                            let dst = ((n * c + co) * oh + y * r + i) * ow + x * r + j;
                            f(src, dst);
                        }
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour in-plane upsampling by an integer factor.
pub(crate) fn upsample_nearest2d<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    let out = Shape::new(s.n, s.c, s.d, s.h * r, s.w * r);
    let mut y = Tensor::zeros(out);
    let planes = s.n * s.c * s.d;
    let (src, dst) = (x.data(), y.data_mut());
    for p in 0..planes {
        for oy in 0..out.h {
            let srow = (p * s.h + oy / r) * s.w;
            let drow = (p * out.h + oy) * out.w;
            for ox in 0..out.w {
                dst[drow + ox] = src[srow + ox / r];
            }
        }
    }
    y
}

pub(crate) fn upsample_nearest2d_backward<T: Scalar>(gy: &Tensor<T>, in_shape: Shape, r: usize) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    let out = gy.shape();
    let planes = in_shape.n * in_shape.c * in_shape.d;
    let (src, dst) = (gy.data(), gx.data_mut());
    for p in 0..planes {
        for oy in 0..out.h {
            let drow = (p * in_shape.h + oy / r) * in_shape.w;
            let srow = (p * out.h + oy) * out.w;
            for ox in 0..out.w {
                dst[drow + ox / r] += src[srow + ox];
            }
        }
    }
    gx
}

/// Source taps for half-pixel-centred linear interpolation along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

fn linear_taps<T: Scalar>(input: usize, r: usize) -> Vec<Tap<T>> {
    (0..input * r)
        .map(|o| {
            let src = ((o as f64 + 0.5) / r as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: T::from_f64_lossy(1.0 - frac),
                w1: T::from_f64_lossy(frac),
            }
        })
        .collect()
}

/// Resample along `axis` (0 = d, 1 = h, 2 = w) of a `(rows, d, h, w)`
/// buffer. With `adjoint`, `src` holds the upsampled extent and the result
/// has `len` entries along the axis.
fn apply_axis<T: Scalar>(
    src: &[T],
    dims: [usize; 4],
    axis: usize,
    taps: &[Tap<T>],
    len: usize,
    adjoint: bool,
) -> (Vec<T>, [usize; 4]) {
    let outer: usize = dims[..=axis].iter().product();
    let inner: usize = dims[axis + 2..].iter().product();
    let src_len = dims[axis + 1];
    let mut out_dims = dims;
    out_dims[axis + 1] = len;
    let mut dst = vec![T::zero(); out_dims.iter().product()];
    for o in 0..outer {
        let s = &src[o * src_len * inner..(o + 1) * src_len * inner];
        let d = &mut dst[o * len * inner..(o + 1) * len * inner];
        for (oi, t) in taps.iter().enumerate() {
            if adjoint {
                for k in 0..inner {
                    let g = s[oi * inner + k];
                    d[t.i0 * inner + k] += t.w0 * g;
                    d[t.i1 * inner + k] += t.w1 * g;
                }
            } else {
                for k in 0..inner {
                    d[oi * inner + k] = t.w0 * s[t.i0 * inner + k] + t.w1 * s[t.i1 * inner + k];
                }
            }
        }
    }
    (dst, out_dims)
}

/// Trilinear upsampling by `r` on all three spatial axes.
pub(crate) fn upsample_linear3d<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    let mut buf = x.data().to_vec();
    let mut dims = [s.n * s.c, s.d, s.h, s.w];
    for axis in 0..3 {
        let taps = linear_taps::<T>(dims[axis + 1], r);
        let (next, nd) = apply_axis(&buf, dims, axis, &taps, taps.len(), false);
        buf = next;
        dims = nd;
    }
    Tensor::from_vec(Shape::new(s.n, s.c, dims[1], dims[2], dims[3]), buf).expect("sizes consistent")
}

pub(crate) fn upsample_linear3d_backward<T: Scalar>(gy: &Tensor<T>, in_shape: Shape, r: usize) -> Tensor<T> {
    let gs = gy.shape();
    let mut buf = gy.data().to_vec();
    let mut dims = [gs.n * gs.c, gs.d, gs.h, gs.w];
    let in_ext = [in_shape.d, in_shape.h, in_shape.w];
    for axis in (0..3).rev() {
        let taps = linear_taps::<T>(in_ext[axis], r);
        let (next, nd) = apply_axis(&buf, dims, axis, &taps, in_ext[axis], true);
        buf = next;
        dims = nd;
    }
    Tensor::from_vec(in_shape, buf).expect("sizes consistent")
}
